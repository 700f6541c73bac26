#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "geomppca/baselines.hpp"
#include "geomppca/estimators.hpp"
#include "geomppca/parallel.hpp"
#include "geomppca/random.hpp"
#include "json.hpp"

namespace geomppca::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunConfig {
  std::string command;
  std::string manifold = "sphere";
  std::vector<double> axes{1.0, 1.0, 1.0};
  std::vector<double> m;
  std::vector<double> lambda{1.0};
  double angle = 0.0;
  std::vector<double> W;
  double sigma = 0.1;
  double T = 1.0;
  int k = 1;
  int n = 100;
  int N = 64;
  int bridges = 1000;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string grid = "-2:2:21";
  std::vector<double> target;
  std::vector<double> true_lambda{0.4};
  double true_sigma = 0.075;
  std::string data;
  int iters = 50;
  double step_size = 0.05;
  std::string method = "tpca";
  int steps = 500;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, command, manifold, axes, m, lambda, angle, W, sigma,
                                                T, k, n, N, bridges, seed, out, grid, target, true_lambda,
                                                true_sigma, data, iters, step_size, method, steps)

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files written by the current run, removed again if it fails.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  std::ofstream open(const std::string& name) {
    fs::create_directories(dir_);
    const fs::path p = dir_ / name;
    std::ofstream f(p);
    written_.push_back(p);
    if (!f) throw CliError("cannot open " + p.string() + " for writing");
    f << std::setprecision(17);
    return f;
  }

  void close(std::ofstream& f, const std::string& name) {
    f.flush();
    if (!f) throw CliError("write to " + (dir_ / name).string() + " failed");
    f.close();
  }

  void rollback() {
    std::error_code ec;
    for (const fs::path& p : written_) fs::remove(p, ec);
    written_.clear();
  }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
};

struct Context {
  RunConfig cfg;
  ManifoldChart chart;
  bool embeds = false;
  Outputs outputs;
  json diagnostics = json::object();
};

Vec to_vec(const std::vector<double>& xs, int d, const std::string& what) {
  if (static_cast<int>(xs.size()) != d) {
    throw CliError(what + " needs " + std::to_string(d) + " values, got " + std::to_string(xs.size()));
  }
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = xs[i];
  return v;
}

json mat_json(const Eigen::Ref<const Eigen::MatrixXd>& a) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

std::string numbered(const std::string& prefix, int count) {
  std::string s;
  for (int i = 1; i <= count; ++i) s += "," + prefix + std::to_string(i);
  return s;
}

void write_point(std::ostream& f, const Context& ctx, const Vec& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) f << ',' << x(i);
  if (ctx.embeds) {
    const Vec3 e = ctx.chart.embed(x);
    f << ',' << e(0) << ',' << e(1) << ',' << e(2);
  } else {
    f << ",nan,nan,nan";
  }
}

std::string point_header(int d) { return numbered("x", d) + ",emb_x,emb_y,emb_z"; }

ManifoldChart make_chart(const RunConfig& cfg) {
  if (cfg.axes.size() != 3) throw CliError("--axes needs 3 values");
  return BuiltinSurface::parse(cfg.manifold, cfg.axes[0], cfg.axes[1], cfg.axes[2]).make_chart();
}

Vec mean_point(const Context& ctx) {
  const int d = ctx.chart.dim();
  return ctx.cfg.m.empty() ? Vec(Vec::Zero(d)) : to_vec(ctx.cfg.m, d, "--m");
}

ModelParams model_from(const Context& ctx, const std::vector<double>& variances, double sigma) {
  const RunConfig& c = ctx.cfg;
  const int d = ctx.chart.dim();
  const Vec m = mean_point(ctx);
  ctx.chart.require_domain(m);
  Mat w;
  if (!c.W.empty()) {
    if (c.W.size() % d != 0) throw CliError("--W needs a multiple of " + std::to_string(d) + " values");
    const int k = static_cast<int>(c.W.size()) / d;
    if (k > d) throw CliError("--W has more columns than the manifold dimension");
    w.resize(d, k);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < k; ++j) w(i, j) = c.W[i * k + j];
  } else {
    w = frame_from_variances(ctx.chart, m, variances, c.angle, c.T);
  }
  ModelParams p{ctx.chart, m, w, sigma, c.T};
  p.validate();
  return p;
}

ModelParams model(const Context& ctx) { return model_from(ctx, ctx.cfg.lambda, ctx.cfg.sigma); }

std::vector<Vec> read_points(const std::string& path, int d) {
  std::ifstream f(path);
  if (!f) throw CliError("cannot read data file " + path);
  std::string line;
  if (!std::getline(f, line)) throw CliError("data file " + path + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<int> cols;
  for (int i = 1; i <= d; ++i) {
    const auto it = std::find(header.begin(), header.end(), "x" + std::to_string(i));
    if (it == header.end()) throw CliError("data file " + path + " has no column x" + std::to_string(i));
    cols.push_back(static_cast<int>(it - header.begin()));
  }
  std::vector<Vec> pts;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    Vec x(d);
    for (int i = 0; i < d; ++i) {
      if (cols[i] >= static_cast<int>(cells.size())) throw CliError("short row in " + path);
      try {
        x(i) = std::stod(cells[cols[i]]);
      } catch (const std::exception&) {
        throw CliError("bad number '" + cells[cols[i]] + "' in " + path);
      }
    }
    pts.push_back(x);
  }
  if (pts.empty()) throw CliError("data file " + path + " has no rows");
  return pts;
}

// Data from --data, or synthesized from the true parameters and written to data.csv.
std::vector<Vec> load_or_synthesize(Context& ctx) {
  const int d = ctx.chart.dim();
  if (!ctx.cfg.data.empty()) {
    std::vector<Vec> pts = read_points(ctx.cfg.data, d);
    for (const Vec& x : pts) ctx.chart.require_domain(x);
    return pts;
  }
  const ModelParams truth = model_from(ctx, ctx.cfg.true_lambda, ctx.cfg.true_sigma);
  const SampleSet set = forward_samples(truth, ctx.cfg.N, ctx.cfg.n, ctx.cfg.seed, false);
  ctx.diagnostics["synthesis_rejections"] = set.rejections;
  std::ofstream f = ctx.outputs.open("data.csv");
  f << "sample_id" << point_header(d) << '\n';
  for (std::size_t i = 0; i < set.endpoints.size(); ++i) {
    f << i;
    write_point(f, ctx, set.endpoints[i]);
    f << '\n';
  }
  ctx.outputs.close(f, "data.csv");
  return set.endpoints;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.size() != 3) throw CliError("--grid must be lo:hi:count");
  double lo = 0.0, hi = 0.0;
  int count = 0;
  try {
    lo = std::stod(parts[0]);
    hi = std::stod(parts[1]);
    count = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw CliError("--grid must be lo:hi:count");
  }
  if (count < 1 || !(hi >= lo)) throw CliError("--grid needs count >= 1 and hi >= lo");
  std::vector<double> axis;
  for (int i = 0; i < count; ++i) axis.push_back(count == 1 ? lo : lo + (hi - lo) * i / (count - 1));
  return axis;
}

void cmd_sample(Context& ctx) {
  const ModelParams p = model(ctx);
  const RunConfig& c = ctx.cfg;
  const int d = ctx.chart.dim();
  const SampleSet set = forward_samples(p, c.N, c.n, c.seed, true);
  ctx.diagnostics["rejections"] = set.rejections;

  std::ofstream tf = ctx.outputs.open("trajectories.csv");
  tf << "sample_id,step,t" << point_header(d) << '\n';
  for (std::size_t i = 0; i < set.trajectories.size(); ++i) {
    const Trajectory& tr = set.trajectories[i];
    for (std::size_t j = 0; j < tr.base.size(); ++j) {
      tf << i << ',' << j << ',' << tr.times[j];
      write_point(tf, ctx, tr.base[j]);
      tf << '\n';
    }
  }
  ctx.outputs.close(tf, "trajectories.csv");

  std::ofstream ef = ctx.outputs.open("endpoints.csv");
  ef << "sample_id" << point_header(d) << '\n';
  for (std::size_t i = 0; i < set.endpoints.size(); ++i) {
    ef << i;
    write_point(ef, ctx, set.endpoints[i]);
    ef << '\n';
  }
  ctx.outputs.close(ef, "endpoints.csv");
}

void cmd_density(Context& ctx) {
  const ModelParams p = model(ctx);
  const RunConfig& c = ctx.cfg;
  const int d = ctx.chart.dim();
  const std::vector<double> axis = parse_grid(c.grid);
  std::vector<Vec> pts;
  std::vector<int> idx(d, 0);
  const int count = static_cast<int>(axis.size());
  while (true) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = axis[idx[i]];
    pts.push_back(x);
    int i = d - 1;
    while (i >= 0 && ++idx[i] == count) idx[i--] = 0;
    if (i < 0) break;
  }
  const std::vector<GridDensity> res = density_grid(p, pts, c.n, c.bridges, c.seed);

  std::ofstream f = ctx.outputs.open("density.csv");
  f << point_header(d).substr(1) << ",density_volg,density_chart,stderr,n_bridges\n";
  std::size_t failed = 0, rejections = 0;
  double ess_min = std::numeric_limits<double>::infinity();
  for (const GridDensity& g : res) {
    std::ostringstream row;
    row << std::setprecision(17);
    write_point(row, ctx, g.x);
    f << row.str().substr(1);
    if (g.estimate) {
      f << ',' << g.estimate->value << ',' << g.estimate->chart_density << ',' << g.estimate->std_error << ','
        << g.estimate->n_samples << '\n';
      rejections += g.estimate->rejections;
      ess_min = std::min(ess_min, g.estimate->ess);
    } else {
      f << ",nan,nan,nan,0\n";
      ++failed;
    }
  }
  ctx.outputs.close(f, "density.csv");
  ctx.diagnostics["rejections"] = rejections;
  ctx.diagnostics["failed_points"] = failed;
  if (std::isfinite(ess_min)) ctx.diagnostics["ess_min"] = ess_min;
}

void cmd_bridge(Context& ctx) {
  const ModelParams p = model(ctx);
  const RunConfig& c = ctx.cfg;
  const int d = ctx.chart.dim();
  const int k = p.rank();
  const Vec v = to_vec(c.target, d, "--target");
  ctx.chart.require_domain(v);
  if (c.bridges < 1) throw CliError("--bridges must be >= 1");

  std::vector<BridgePath> paths(c.bridges);
  parallel_for(static_cast<std::size_t>(c.bridges), [&](std::size_t b) {
    paths[b] = simulate_bridge(p, v, c.n, derive_seed(c.seed, b), {true, false, true});
  });
  const double dt = p.T / c.n;

  std::ofstream bf = ctx.outputs.open("bridges.csv");
  bf << "bridge_id,step,t" << point_header(d) << ",log_weight\n";
  for (int b = 0; b < c.bridges; ++b) {
    for (int j = 0; j <= c.n; ++j) {
      bf << b << ',' << j << ',' << j * dt;
      write_point(bf, ctx, paths[b].base[j]);
      bf << ',' << paths[b].log_weight << '\n';
    }
  }
  ctx.outputs.close(bf, "bridges.csv");

  std::ofstream lf = ctx.outputs.open("latent.csv");
  lf << "bridge_id,step,t" << numbered("xhat", k) << ",log_weight\n";
  for (int b = 0; b < c.bridges; ++b) {
    for (int j = 0; j <= c.n; ++j) {
      lf << b << ',' << j << ',' << j * dt;
      for (int i = 0; i < k; ++i) lf << ',' << paths[b].latent[j](i);
      lf << ',' << paths[b].log_weight << '\n';
    }
  }
  ctx.outputs.close(lf, "latent.csv");

  double max_lw = -std::numeric_limits<double>::infinity();
  for (const BridgePath& bp : paths) max_lw = std::max(max_lw, bp.log_weight);
  if (!std::isfinite(max_lw)) throw EstimationError("bridge: non-finite log weights");
  std::vector<double> w(c.bridges);
  double sum = 0.0, sum_sq = 0.0;
  std::size_t rejections = 0;
  std::vector<double> hits;
  for (int b = 0; b < c.bridges; ++b) {
    w[b] = std::exp(paths[b].log_weight - max_lw);
    sum += w[b];
    sum_sq += w[b] * w[b];
    rejections += paths[b].rejections;
    hits.push_back(paths[b].hit_error);
  }
  std::ofstream mf = ctx.outputs.open("latent_mean.csv");
  mf << "step,t" << numbered("xhat", k) << '\n';
  for (int j = 0; j <= c.n; ++j) {
    Vec mean = Vec::Zero(k);
    for (int b = 0; b < c.bridges; ++b) mean += (w[b] / sum) * paths[b].latent[j];
    mf << j << ',' << j * dt;
    for (int i = 0; i < k; ++i) mf << ',' << mean(i);
    mf << '\n';
  }
  ctx.outputs.close(mf, "latent_mean.csv");

  std::nth_element(hits.begin(), hits.begin() + hits.size() / 2, hits.end());
  ctx.diagnostics["rejections"] = rejections;
  ctx.diagnostics["ess"] = sum * sum / sum_sq;
  ctx.diagnostics["median_hit_error"] = hits[hits.size() / 2];
}

ModelParams tangent_init(const Context& ctx, const std::vector<Vec>& data, int k) {
  const TangentPCAResult t = tangent_pca(ctx.chart, data, k);
  const Mat w = t.frame * t.fit.W_ml;
  double sigma = std::sqrt(t.fit.sigma2_ml);
  if (!(sigma > 0.0)) sigma = 0.1 * std::sqrt(t.fit.eigvals(0));
  return ModelParams{ctx.chart, t.base, w, sigma, ctx.cfg.T};
}

void cmd_fit(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const std::vector<Vec> data = load_or_synthesize(ctx);
  const int d = ctx.chart.dim();
  if (c.k < 1 || c.k > d) throw CliError("--k must be in [1, " + std::to_string(d) + "]");
  const ModelParams init = tangent_init(ctx, data, c.k);
  FitOptions opts;
  opts.n = c.n;
  opts.n_samples = c.bridges;
  opts.max_iter = c.iters;
  opts.step_size = c.step_size;
  opts.seed = c.seed;
  const PCAFit fit = fit_mle(data, ctx.chart, c.k, init, opts);

  std::ofstream tf = ctx.outputs.open("trace.csv");
  tf << "iter,neg_log_lik,stderr" << numbered("lambda", c.k) << ",sigma\n";
  for (const FitTraceEntry& e : fit.trace) {
    tf << e.iter << ',' << e.neg_log_lik << ',' << e.std_error;
    for (double l : e.lambdas) tf << ',' << l;
    tf << ',' << e.sigma << '\n';
  }
  ctx.outputs.close(tf, "trace.csv");

  json j;
  j["config"] = c;
  j["params"] = {{"m", vec_json(fit.params.m)},
                 {"W", mat_json(fit.params.W)},
                 {"sigma", fit.params.sigma},
                 {"T", fit.params.T}};
  j["eigen"] = {{"U", mat_json(fit.eigen.U)}, {"lambda", vec_json(fit.eigen.lambda)}, {"V", mat_json(fit.eigen.V)}};
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  std::ofstream jf = ctx.outputs.open("fit.json");
  jf << j.dump(2) << '\n';
  ctx.outputs.close(jf, "fit.json");
  ctx.diagnostics["iterations"] = fit.iterations;
  ctx.diagnostics["final_neg_log_lik"] = fit.trace.back().neg_log_lik;
}

void cmd_components(Context& ctx) {
  const ModelParams p = model(ctx);
  const RunConfig& c = ctx.cfg;
  const std::vector<Vec> data = load_or_synthesize(ctx);
  const int d = ctx.chart.dim();
  const int k = p.rank();
  std::ofstream f = ctx.outputs.open("components.csv");
  f << "datum_id" << numbered("x", d) << numbered("xhat", k) << numbered("spread", k) << ",ess,degenerate\n";
  std::size_t rejections = 0, degenerate = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LatentSummary s = principal_paths(p, data[i], c.n, c.bridges, datum_seed(c.seed, data[i]));
    f << i;
    for (int a = 0; a < d; ++a) f << ',' << data[i](a);
    for (int a = 0; a < k; ++a) f << ',' << s.endpoint(a);
    for (int a = 0; a < k; ++a) f << ',' << s.endpoint_spread(a, a);
    f << ',' << s.ess << ',' << (s.warning ? 1 : 0) << '\n';
    rejections += s.rejections;
    if (s.warning) ++degenerate;
  }
  ctx.outputs.close(f, "components.csv");
  ctx.diagnostics["rejections"] = rejections;
  ctx.diagnostics["degenerate_weights"] = degenerate;
}

void cmd_mpp(Context& ctx) {
  const ModelParams p = model(ctx);
  const RunConfig& c = ctx.cfg;
  const int d = ctx.chart.dim();
  if (p.rank() != d) throw CliError("mpp needs a full-rank frame (k = " + std::to_string(d) + ")");
  const Vec v = to_vec(c.target, d, "--target");
  const MppResult r = mpp_shoot(FramePoint{ctx.chart, p.m, p.W}, v, MppOptions{c.steps, 50, 1e-10, std::nullopt});

  std::ofstream f = ctx.outputs.open("mpp.csv");
  f << "step,t" << point_header(d);
  for (int j = 1; j <= d; ++j)
    for (int i = 1; i <= d; ++i) f << ",nu" << i << '_' << j;
  f << '\n';
  for (std::size_t s = 0; s < r.path.size(); ++s) {
    f << s << ',' << static_cast<double>(s) / c.steps;
    write_point(f, ctx, r.path[s].x);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) f << ',' << r.path[s].nu(i, j);
    f << '\n';
  }
  ctx.outputs.close(f, "mpp.csv");
  ctx.diagnostics["sq_distance"] = r.sq_distance;
  ctx.diagnostics["endpoint_residual"] = r.endpoint_residual;
  ctx.diagnostics["hamiltonian_drift"] = r.hamiltonian_drift;
  ctx.diagnostics["iterations"] = r.iterations;
}

void cmd_baseline(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const std::vector<Vec> data = load_or_synthesize(ctx);
  json j;
  j["config"] = c;
  j["method"] = c.method;
  if (c.method == "ppca") {
    // Euclidean PPCA in the ambient embedding, or chart coordinates without one.
    const int dim = ctx.embeds ? 3 : ctx.chart.dim();
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(data.size()), dim);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (ctx.embeds) {
        raw.row(static_cast<Eigen::Index>(i)) = ctx.chart.embed(data[i]).transpose();
      } else {
        raw.row(static_cast<Eigen::Index>(i)) = data[i].transpose();
      }
    }
    const EuclideanPPCAFit fit = ppca_fit(raw, c.k);
    j["coordinates"] = ctx.embeds ? "embedding" : "chart";
    j["m"] = vec_json(fit.m);
    j["W"] = mat_json(fit.W_ml);
    j["sigma2"] = fit.sigma2_ml;
    j["eigvals"] = vec_json(fit.eigvals);
  } else if (c.method == "tpca") {
    const TangentPCAResult t = tangent_pca(ctx.chart, data, c.k);
    j["base"] = vec_json(t.base);
    j["frame"] = mat_json(t.frame);
    j["W_tangent"] = mat_json(t.fit.W_ml);
    j["W"] = mat_json(t.frame * t.fit.W_ml);
    j["sigma2"] = t.fit.sigma2_ml;
    j["eigvals"] = vec_json(t.fit.eigvals);
  } else {
    throw CliError("unknown baseline method '" + c.method + "' (ppca or tpca)");
  }
  std::ofstream f = ctx.outputs.open("baseline.json");
  f << j.dump(2) << '\n';
  ctx.outputs.close(f, "baseline.json");
}

struct Command {
  const char* name;
  const char* help;
  void (*body)(Context&);
};

constexpr Command kCommands[] = {
    {"sample", "forward trajectories and endpoints", cmd_sample},
    {"density", "transition density on a grid", cmd_density},
    {"bridge", "guided bridges and latent paths to a target", cmd_bridge},
    {"fit", "Monte Carlo maximum likelihood fit", cmd_fit},
    {"components", "per-datum latent principal paths", cmd_components},
    {"mpp", "most probable path to a target", cmd_mpp},
    {"baseline", "Euclidean or tangent PCA", cmd_baseline},
};

void add_options(CLI::App* sub, RunConfig& c, std::string& config_path) {
  sub->add_option("--manifold", c.manifold, "sphere, ellipsoid or flatD");
  sub->add_option("--axes", c.axes, "ellipsoid semi-axes a,b,c")->delimiter(',');
  sub->add_option("--m", c.m, "mean point in chart coordinates")->delimiter(',');
  sub->add_option("--lambda", c.lambda, "variances along the principal axes")->delimiter(',');
  sub->add_option("--angle", c.angle, "orientation of the principal axes");
  sub->add_option("--W", c.W, "frame matrix, row-major d x k")->delimiter(',');
  sub->add_option("--sigma", c.sigma, "isotropic noise scale");
  sub->add_option("--T", c.T, "diffusion time");
  sub->add_option("--k", c.k, "latent dimension for fitting");
  sub->add_option("--n", c.n, "time steps");
  sub->add_option("--N", c.N, "samples");
  sub->add_option("--bridges", c.bridges, "bridges per point");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--grid", c.grid, "grid axis lo:hi:count");
  sub->add_option("--target", c.target, "bridge or path target")->delimiter(',');
  sub->add_option("--true-lambda", c.true_lambda, "variances for synthesized data")->delimiter(',');
  sub->add_option("--true-sigma", c.true_sigma, "noise scale for synthesized data");
  sub->add_option("--data", c.data, "CSV with columns x1..xd");
  sub->add_option("--iters", c.iters, "fit iterations");
  sub->add_option("--step-size", c.step_size, "initial fit step");
  sub->add_option("--method", c.method, "baseline method: ppca or tpca");
  sub->add_option("--steps", c.steps, "integration steps for mpp");
  sub->add_option("--config", config_path, "config.json of an earlier run; flags override it");
}

// Fields of a saved config that were not given on the command line.
RunConfig merge_config(const RunConfig& flags, const CLI::App* sub, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CliError("cannot read config " + path);
  json saved;
  try {
    saved = json::parse(f);
  } catch (const json::exception& e) {
    throw CliError("bad config " + path + ": " + e.what());
  }
  if (saved.contains("config")) saved = saved["config"];
  json merged = flags;
  for (auto it = saved.begin(); it != saved.end(); ++it) {
    if (it.key() == "command" || !merged.contains(it.key())) continue;
    std::string flag = "--" + it.key();
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (sub->count(flag) == 0) merged[it.key()] = it.value();
  }
  try {
    return merged.get<RunConfig>();
  } catch (const json::exception& e) {
    throw CliError("bad config " + path + ": " + e.what());
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"geomppca: probabilistic PCA on manifolds"};
  app.require_subcommand(1);
  RunConfig flags;
  std::string config_path;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_options(sub, flags, config_path);
    subs.emplace_back(sub, &c);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const Command* cmd = nullptr;
  CLI::App* active = nullptr;
  for (auto& [sub, c] : subs) {
    if (sub->parsed()) {
      active = sub;
      cmd = c;
    }
  }

  std::optional<Context> ctx;
  try {
    RunConfig cfg = config_path.empty() ? flags : merge_config(flags, active, config_path);
    cfg.command = cmd->name;
    if (cfg.n < 1 || cfg.N < 1 || cfg.bridges < 1 || cfg.iters < 0 || cfg.steps < 1) {
      throw CliError("--n, --N, --bridges and --steps must be positive");
    }
    ManifoldChart chart = make_chart(cfg);
    ctx.emplace(Context{cfg, chart, false, Outputs(cfg.out), json::object()});
    try {
      chart.embed(Vec::Zero(chart.dim()));
      ctx->embeds = true;
    } catch (const InvalidArgument&) {
    }
    cmd->body(*ctx);
    ctx->diagnostics["threads"] = worker_count();
    json config = ctx->cfg;
    config["diagnostics"] = ctx->diagnostics;
    std::ofstream f = ctx->outputs.open("config.json");
    f << config.dump(2) << '\n';
    ctx->outputs.close(f, "config.json");
    out << "wrote " << cfg.command << " outputs to " << cfg.out << '\n';
    return 0;
  } catch (const std::exception& e) {
    if (ctx) ctx->outputs.rollback();
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace geomppca::cli
