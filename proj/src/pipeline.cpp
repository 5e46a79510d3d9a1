#include "cgdm/pipeline.hpp"

#include "cgdm/container.hpp"
#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"
#include "cgdm/parallel.hpp"
#include "cgdm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cgdm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Child stream ids keeping training and evaluation randomness apart.
enum : std::uint64_t { kPool = 11, kCalibration = 12, kRecords = 13, kTraining = 14, kEstimate = 15 };

void check_known_keys(const json& doc, const json& defaults, const std::string& prefix) {
  if (!doc.is_object()) throw ConfigError("config: '" + prefix + "' must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    const json& def = defaults.at(it.key());
    if (def.is_object()) check_known_keys(it.value(), def, key);
  }
}

template <class T>
T get(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + section + "." + key + ": " + e.what());
  }
}

std::vector<std::uint64_t> eval_seeds(const RunConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.eval_seeds; ++i) seeds.push_back(cfg.eval_seed_base + static_cast<std::uint64_t>(i));
  return seeds;
}

std::string json_line(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

json default_config_json() {
  return json::parse(R"({
    "seed": 1,
    "out": "run",
    "threads": 0,
    "data": {
      "l": 32, "rows": 64, "cols": 64,
      "covariance": {"kind": "toeplitz", "rho": 0.9, "rank": 4, "scale": 1.0, "path": "", "seed": 0}
    },
    "sensing": {"m": 9, "p": 256, "sigma_n_rel": 0.01},
    "objective": {"tau": 0.0, "psi": "none"},
    "diffusion": {
      "enabled": true, "T": 64, "p_min": 2, "p_max": 1024,
      "levels": [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
      "instances_per_level": 3, "draws_per_instance": 5,
      "beta_start": 1e-4, "beta_end": 0.02
    },
    "training_data": {
      "records": 12000, "pool_per_level": 6, "rho_min": 0.8, "rho_max": 0.95,
      "wishart_min": 1e-3, "wishart_max": 0.3
    },
    "denoiser": {
      "c1": 16, "c2": 32, "c3": 64, "d_emb": 32,
      "lr": 1e-3, "batch": 32, "steps": 3000, "clip_norm": 1.0,
      "holdout": 0.1, "checkpoint_every": 500, "gaussian_sigma": 1.0
    },
    "solver": {
      "method": "identity", "init": "isotropic", "lambda0": 0.0,
      "armijo_c": 1e-4, "armijo_shrink": 0.5, "max_backtracks": 30,
      "max_iters": 500, "tol_grad": -1.0, "tol_obj": 1e-8, "obj_window": 5,
      "denoise_every": 1, "start_step": 0, "zero_sigma": false
    },
    "eval": {"seeds": 10, "seed_base": 1000, "cos_threshold": 0.9, "heatmaps": true}
  })");
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  const json defaults = default_config_json();
  const json* def = &defaults;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!def->is_object() || !def->contains(part)) throw ConfigError("--set: unknown key '" + key + "'");
    def = &def->at(part);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig config_from_json(const json& doc) {
  json merged = default_config_json();
  check_known_keys(doc, merged, "");
  merged.update(doc, true);
  RunConfig c;
  c.document = merged;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.out = merged.at("out").get<std::string>();
    c.threads = merged.at("threads").get<unsigned>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const json& cov = merged.at("data").at("covariance");
  c.cov.dim = get<Index>(merged, "data", "l");
  c.rows = get<int>(merged, "data", "rows");
  c.cols = get<int>(merged, "data", "cols");
  try {
    const std::string kind = cov.at("kind").get<std::string>();
    c.cov_seed = cov.at("seed").get<std::uint64_t>();
    if (kind == "toeplitz") {
      c.cov.kind = ToeplitzCovariance{cov.at("rho").get<double>()};
    } else if (kind == "lowrank_plus_identity") {
      c.cov.kind = LowRankPlusIdentity{cov.at("rank").get<int>(), cov.at("scale").get<double>()};
    } else if (kind == "from_file") {
      c.cov.kind = CovarianceFile{cov.at("path").get<std::string>()};
    } else {
      throw ConfigError("config: unknown covariance kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: data.covariance: ") + e.what());
  }

  c.m = get<Index>(merged, "sensing", "m");
  c.p = get<int>(merged, "sensing", "p");
  c.sigma_n_rel = get<double>(merged, "sensing", "sigma_n_rel");

  c.objective.tau = get<double>(merged, "objective", "tau");
  const std::string psi = get<std::string>(merged, "objective", "psi");
  if (psi == "none") c.objective.psi = Regularizer::none;
  else if (psi == "frobenius_ridge") c.objective.psi = Regularizer::frobenius_ridge;
  else throw ConfigError("config: unknown regularizer '" + psi + "'");

  c.diffusion_enabled = get<bool>(merged, "diffusion", "enabled");
  c.T = get<int>(merged, "diffusion", "T");
  c.p_min = get<double>(merged, "diffusion", "p_min");
  c.p_max = get<double>(merged, "diffusion", "p_max");
  c.levels = get<std::vector<int>>(merged, "diffusion", "levels");
  c.instances_per_level = get<int>(merged, "diffusion", "instances_per_level");
  c.draws_per_instance = get<int>(merged, "diffusion", "draws_per_instance");
  c.beta_start = get<double>(merged, "diffusion", "beta_start");
  c.beta_end = get<double>(merged, "diffusion", "beta_end");

  c.records = get<int>(merged, "training_data", "records");
  c.pool_per_level = get<int>(merged, "training_data", "pool_per_level");
  c.rho_min = get<double>(merged, "training_data", "rho_min");
  c.rho_max = get<double>(merged, "training_data", "rho_max");
  c.wishart_min = get<double>(merged, "training_data", "wishart_min");
  c.wishart_max = get<double>(merged, "training_data", "wishart_max");

  c.hyper.arch.c1 = get<int>(merged, "denoiser", "c1");
  c.hyper.arch.c2 = get<int>(merged, "denoiser", "c2");
  c.hyper.arch.c3 = get<int>(merged, "denoiser", "c3");
  c.hyper.arch.d_emb = get<int>(merged, "denoiser", "d_emb");
  c.hyper.lr = get<double>(merged, "denoiser", "lr");
  c.hyper.batch = get<int>(merged, "denoiser", "batch");
  c.hyper.steps = get<int>(merged, "denoiser", "steps");
  c.hyper.clip_norm = get<double>(merged, "denoiser", "clip_norm");
  c.holdout = get<double>(merged, "denoiser", "holdout");
  c.checkpoint_every = get<int>(merged, "denoiser", "checkpoint_every");
  c.gaussian_sigma = get<double>(merged, "denoiser", "gaussian_sigma");

  c.method = get<std::string>(merged, "solver", "method");
  c.init = parse_init(get<std::string>(merged, "solver", "init"));
  c.solver.lambda0 = get<double>(merged, "solver", "lambda0");
  c.solver.armijo.c = get<double>(merged, "solver", "armijo_c");
  c.solver.armijo.shrink = get<double>(merged, "solver", "armijo_shrink");
  c.solver.armijo.max_backtracks = get<int>(merged, "solver", "max_backtracks");
  c.solver.max_iters = get<int>(merged, "solver", "max_iters");
  c.solver.tol_grad = get<double>(merged, "solver", "tol_grad");
  c.solver.tol_obj = get<double>(merged, "solver", "tol_obj");
  c.solver.obj_window = get<int>(merged, "solver", "obj_window");
  c.solver.denoise_every = get<int>(merged, "solver", "denoise_every");
  c.start_step = get<int>(merged, "solver", "start_step");
  c.zero_sigma = get<bool>(merged, "solver", "zero_sigma");

  c.eval_seeds = get<int>(merged, "eval", "seeds");
  c.eval_seed_base = get<std::uint64_t>(merged, "eval", "seed_base");
  c.cos_threshold = get<double>(merged, "eval", "cos_threshold");
  c.heatmaps = get<bool>(merged, "eval", "heatmaps");

  c.hyper.seed = Rng(c.seed).child(kTraining).seed();
  c.solver.preconditioner.gaussian_sigma = c.gaussian_sigma;
  return c;
}

RunConfig load_config(const fs::path* path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path != nullptr) {
    const std::string text = read_file(*path);
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("config " + path->string() + ": " + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

void validate(const RunConfig& c) {
  const Index l = c.l();
  if (l < 2) throw ValidationError("config: data.l must be >= 2");
  if (c.rows < 1 || c.cols < 1) throw ValidationError("config: cube rows and cols must be >= 1");
  if (c.m < 1 || c.m >= l) throw ValidationError("config: sensing.m must satisfy 1 <= m < l");
  if (c.p < 1 || c.n() % c.p != 0) {
    throw ValidationError("config: sensing.p = " + std::to_string(c.p) + " must divide n = " + std::to_string(c.n()));
  }
  if (!(c.sigma_n_rel >= 0.0)) throw ValidationError("config: sensing.sigma_n_rel must be >= 0");
  validate(c.objective);
  validate(c.solver);
  (void)parse_preconditioner(c.method);
  if (c.diffusion_enabled) {
    if (l % 4 != 0) throw ValidationError("config: data.l must be divisible by 4 when diffusion is enabled");
    if (c.T < 1) throw ValidationError("config: diffusion.T must be >= 1");
    if (c.levels.empty()) throw ValidationError("config: diffusion.levels is empty");
    for (std::size_t i = 0; i < c.levels.size(); ++i) {
      if (c.levels[i] < 1 || c.n() % c.levels[i] != 0 || (i > 0 && c.levels[i] <= c.levels[i - 1])) {
        throw ValidationError("config: diffusion.levels must be increasing divisors of n");
      }
    }
    if (!(c.p_min > 0.0 && c.p_max >= c.p_min)) throw ValidationError("config: need 0 < p_min <= p_max");
    if (c.instances_per_level < 1 || c.draws_per_instance < 1 || c.pool_per_level < c.instances_per_level) {
      throw ValidationError("config: calibration counts must be >= 1 and fit in the pool");
    }
    if (!(c.rho_min > -1.0 && c.rho_min <= c.rho_max && c.rho_max < 1.0)) {
      throw ValidationError("config: training_data rho range must lie in (-1, 1)");
    }
    if (!(c.wishart_min > 0.0 && c.wishart_min <= c.wishart_max)) {
      throw ValidationError("config: training_data wishart range invalid");
    }
    if (c.records < 2 || !(c.holdout > 0.0 && c.holdout < 1.0)) {
      throw ValidationError("config: need >= 2 records and 0 < holdout < 1");
    }
  }
  if (c.eval_seeds < 1 || !(c.cos_threshold > 0.0 && c.cos_threshold < 1.0)) {
    throw ValidationError("config: eval.seeds >= 1 and 0 < cos_threshold < 1 required");
  }
}

double sigma_n_for(const RunConfig& cfg, const SymMatrix& truth) {
  return cfg.sigma_n_rel * std::sqrt(truth.matrix().trace() / static_cast<double>(truth.dim()));
}

fs::path Paths::estimate(const std::string& method) const { return dir / ("estimate_" + method + ".csv"); }
fs::path Paths::trace(const std::string& method) const { return dir / ("trace_" + method + ".csv"); }

Paths paths_for(const RunConfig& cfg) {
  Paths p;
  p.dir = cfg.out;
  p.cube = cfg.out / "cube.hscube";
  p.sigma_true = cfg.out / "sigma_true.csv";
  p.schedule = cfg.out / "schedule.json";
  p.weights = cfg.out / "weights.cgdm";
  p.checkpoint = cfg.out / "checkpoint.cgdm";
  p.train_log = cfg.out / "train_log.csv";
  p.train_summary = cfg.out / "train_summary.json";
  p.projections = cfg.out / "projections.cgdm";
  p.report = cfg.out / "report.csv";
  p.summary = cfg.out / "summary.json";
  p.heatmaps = cfg.out / "heatmaps";
  return p;
}

InstancePool build_pool(const RunConfig& cfg) {
  const Rng root = Rng(cfg.seed).child(kPool);
  InstancePool pool;
  struct Job {
    int level;
    int j;
  };
  std::vector<Job> jobs;
  for (int level : cfg.levels)
    for (int j = 0; j < cfg.pool_per_level; ++j) jobs.push_back({level, j});
  std::vector<PoolInstance> built(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    Rng rng = root.child(static_cast<std::uint64_t>(jobs[i].level)).child(static_cast<std::uint64_t>(jobs[i].j));
    const double rho = cfg.rho_min + (cfg.rho_max - cfg.rho_min) * rng.uniform();
    PoolInstance pi;
    pi.truth = synth_covariance(CovarianceSpec{ToeplitzCovariance{rho}, cfg.l()}, 0);
    pi.sigma_n = sigma_n_for(cfg, pi.truth);
    pi.inst = make_instance(pi.truth, cfg.n(), cfg.m, jobs[i].level, pi.sigma_n, rng.next_u64());
    pi.iso = isotropic_init(pi.inst.meas, pi.inst.proj);
    built[i] = std::move(pi);
  });
  for (std::size_t i = 0; i < jobs.size(); ++i) pool[jobs[i].level].push_back(std::move(built[i]));
  return pool;
}

SymMatrix sample_iterate(const PoolInstance& pi, double wishart_min, double wishart_max, Rng& rng) {
  const Index l = pi.truth.dim();
  const double u = rng.uniform();
  const double s = std::exp(std::log(wishart_min) + (std::log(wishart_max) - std::log(wishart_min)) * rng.uniform());
  const Index d = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(l)));
  Matrix w(l, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < l; ++i) w(i, j) = rng.normal();
  Matrix a = pi.truth.matrix() + u * (pi.iso.matrix() - pi.truth.matrix());
  a += s * (w * w.transpose() / static_cast<double>(d) - Matrix::Identity(l, l));
  return project_psd(symmetrize(a));
}

namespace {

struct GradientPair {
  SymMatrix clean;
  SymMatrix error;
};

GradientPair gradient_pair(const PoolInstance& pi, const SymMatrix& sigma, const ObjectiveConfig& obj) {
  GradientSample noisy = gradient(sigma, pi.inst.meas, pi.inst.proj, obj);
  const GradientSample clean = reference_gradient(sigma, pi.inst.full_sample_cov, pi.inst.proj, obj, pi.sigma_n);
  attach_reference(noisy, clean);
  return {*noisy.clean_ref, *noisy.error_ref};
}

}  // namespace

NoiseStats measure_noise(const RunConfig& cfg, const InstancePool& pool) {
  const Rng root = Rng(cfg.seed).child(kCalibration);
  NoiseStats out;
  std::vector<double> clean_entries;
  for (int level : cfg.levels) {
    const auto& instances = pool.at(level);
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (int j = 0; j < cfg.instances_per_level; ++j) {
      Rng rng = root.child(static_cast<std::uint64_t>(level)).child(static_cast<std::uint64_t>(j));
      for (int d = 0; d < cfg.draws_per_instance; ++d) {
        const PoolInstance& pi = instances[static_cast<std::size_t>(j)];
        const GradientPair gp = gradient_pair(pi, sample_iterate(pi, cfg.wishart_min, cfg.wishart_max, rng), cfg.objective);
        sum_sq += gp.error.matrix().squaredNorm();
        count += static_cast<std::size_t>(gp.error.matrix().size());
        const Matrix& c = gp.clean.matrix();
        clean_entries.insert(clean_entries.end(), c.data(), c.data() + c.size());
      }
    }
    out.per_level.push_back({static_cast<double>(level), std::sqrt(sum_sq / static_cast<double>(count))});
  }
  out.scale_c = robust_scale(std::move(clean_entries));
  if (!(out.scale_c > 0.0)) throw CalibrationError("calibration: clean gradients have zero robust scale");
  out.law = fit_power_law(out.per_level);
  return out;
}

DiffusionSchedule schedule_from_stats(const RunConfig& cfg, const NoiseStats& stats) {
  for (std::size_t i = 1; i < stats.per_level.size(); ++i) {
    if (!(stats.per_level[i].std > stats.per_level[i - 1].std)) {
      throw CalibrationError("calibration: measured error std is not increasing in p (p = " +
                                 format_double(stats.per_level[i].p) + ": " + format_double(stats.per_level[i].std) +
                                 " after " + format_double(stats.per_level[i - 1].std) + ")",
                             stats.per_level[i].std - stats.per_level[i - 1].std);
    }
  }
  if (cfg.T == 1) return calibrate_schedule({{cfg.p_max, stats.law(cfg.p_max)}}, stats.scale_c);
  return calibrate_schedule(geometric_grid(stats.law, cfg.p_min, cfg.p_max, cfg.T), stats.scale_c);
}

TrainingSet build_training_set(const RunConfig& cfg, const InstancePool& pool, const DiffusionSchedule& schedule) {
  const Rng root = Rng(cfg.seed).child(kRecords);
  TrainingSet set;
  set.records.resize(static_cast<std::size_t>(cfg.records));
  parallel_for(set.records.size(), [&](std::size_t i) {
    Rng rng = root.child(i);
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T)));
    // Nearest measured level to this step's partition count, on a log scale.
    const double pk = schedule.partitions_at(k);
    int level = cfg.levels.front();
    for (int lv : cfg.levels)
      if (std::abs(std::log(lv / pk)) < std::abs(std::log(level / pk))) level = lv;
    const auto& instances = pool.at(level);
    const PoolInstance& pi = instances[rng.below(instances.size())];
    const GradientPair gp = gradient_pair(pi, sample_iterate(pi, cfg.wishart_min, cfg.wishart_max, rng), cfg.objective);
    const double ab = schedule.alpha_bar_at(k);
    const double std_k = schedule.scale_c * std::sqrt((1.0 - ab) / ab);
    set.records[i] = {gp.clean * (1.0 / schedule.scale_c), gp.error * (1.0 / std_k), k};
  });
  return set;
}

SymMatrix gaussian_noise_prediction(const SymMatrix& x_k, int k, const DiffusionSchedule& schedule, double sigma) {
  const SymMatrix smooth = gaussian_filter_precondition(x_k, sigma);
  return (x_k - smooth) * (1.0 / std::sqrt(1.0 - schedule.alpha_bar_at(k)));
}

TrainSummary evaluate_denoiser(const TrainingSet& held_out, const UNetParams& params, const DiffusionSchedule& schedule,
                               double gaussian_sigma) {
  TrainSummary s;
  s.val_loss = loss_simple(held_out, params, schedule);
  s.zero_loss = zero_predictor_loss(held_out);
  TrainingSet top;
  for (const TrainingRecord& r : held_out.records)
    if (r.k == schedule.T) top.records.push_back(r);
  s.top_count = top.records.size();
  if (!top.records.empty()) {
    s.val_loss_top = loss_simple(top, params, schedule);
    s.zero_loss_top = zero_predictor_loss(top);
    double g = 0.0;
    for (const TrainingRecord& r : top.records) {
      const SymMatrix x = symmetrize(noised_input(r, schedule));
      g += (gaussian_noise_prediction(x, r.k, schedule, gaussian_sigma).matrix() - r.eps.matrix()).squaredNorm();
    }
    s.gauss_loss_top = g / static_cast<double>(top.records.size());
  }
  return s;
}

SolverConfig solver_for(const RunConfig& cfg, const std::string& method, const DiffusionSchedule* schedule,
                        const UNetParams* params) {
  SolverConfig s = cfg.solver;
  s.preconditioner.kind = parse_preconditioner(method);
  s.preconditioner.gaussian_sigma = cfg.gaussian_sigma;
  s.preconditioner.diffusion.schedule = schedule;
  s.preconditioner.diffusion.params = params;
  s.preconditioner.diffusion.start_step = cfg.start_step;
  s.preconditioner.diffusion.zero_sigma = cfg.zero_sigma;
  return s;
}

std::vector<MethodSpec> comparison_methods(const RunConfig& cfg, const DiffusionSchedule* schedule,
                                           const UNetParams* params) {
  std::vector<MethodSpec> out;
  for (const char* name : {"identity", "gaussian", "diffusion"})
    out.push_back({name, solver_for(cfg, name, schedule, params).preconditioner});
  return out;
}

Scenario comparison_scenario(const RunConfig& cfg) {
  Scenario sc;
  sc.cov = cfg.cov;
  sc.cov_seed = cfg.cov_seed;
  sc.n = cfg.n();
  sc.m = cfg.m;
  sc.p = cfg.p;
  sc.sigma_n = sigma_n_for(cfg, synth_covariance(cfg.cov, cfg.cov_seed));
  sc.seeds = eval_seeds(cfg);
  sc.init = cfg.init;
  return sc;
}

void cmd_synth(const RunConfig& cfg, const Log& log) {
  validate(cfg);
  const Paths p = paths_for(cfg);
  const SymMatrix truth = synth_covariance(cfg.cov, cfg.cov_seed);
  const DataMatrix data = sample_gaussian_data(truth, cfg.n(), Rng(cfg.seed).child(1).seed());
  write_cube(data_to_cube(data, cfg.rows, cfg.cols), p.cube);
  write_matrix_csv(truth.matrix(), p.sigma_true);
  log("wrote " + p.cube.string() + " (" + std::to_string(cfg.l()) + " bands, " + std::to_string(cfg.rows) + "x" +
      std::to_string(cfg.cols) + ") and " + p.sigma_true.string());
}

void cmd_calibrate(const RunConfig& cfg, const Log& log) {
  validate(cfg);
  const Paths p = paths_for(cfg);
  const InstancePool pool = build_pool(cfg);
  const NoiseStats stats = measure_noise(cfg, pool);
  for (const ErrorStat& s : stats.per_level) log("p = " + format_double(s.p) + "  error std = " + format_double(s.std));
  log("scale c = " + format_double(stats.scale_c) + ", fitted exponent = " + format_double(stats.law.gamma));
  const DiffusionSchedule schedule = schedule_from_stats(cfg, stats);
  save_schedule(schedule, p.schedule);
  log("wrote " + p.schedule.string() + " (T = " + std::to_string(schedule.T) + ")");
}

void cmd_train(const RunConfig& cfg, const Log& log) {
  validate(cfg);
  const Paths p = paths_for(cfg);
  const DiffusionSchedule schedule = load_schedule(p.schedule);
  const InstancePool pool = build_pool(cfg);
  const TrainingSet all = build_training_set(cfg, pool, schedule);
  auto [train_set, held_out] = split_holdout(all, cfg.holdout);
  log("training on " + std::to_string(train_set.records.size()) + " records, holding out " +
      std::to_string(held_out.records.size()));

  std::optional<TrainState> state;
  std::vector<double> losses;
  if (fs::exists(p.checkpoint)) {
    state = train_state_from_tensors(read_container(p.checkpoint));
    if (!(state->params.arch == cfg.hyper.arch)) throw ValidationError("checkpoint architecture differs from config");
    if (fs::exists(p.train_log)) {
      std::ifstream in(p.train_log);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line) && static_cast<int>(losses.size()) < state->step)
        losses.push_back(std::stod(line.substr(line.find(',') + 1)));
    }
    log("resuming from step " + std::to_string(state->step));
  }
  auto write_log = [&] {
    std::string text = "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) text += std::to_string(i) + ',' + format_double(losses[i]) + '\n';
    write_file(p.train_log, text);
  };
  const int every = std::max(1, cfg.checkpoint_every);
  int step = state ? state->step : 0;
  while (step < cfg.hyper.steps) {
    const int stop = std::min(cfg.hyper.steps, (step / every + 1) * every);
    TrainResult r;
    try {
      r = train(train_set, schedule, cfg.hyper, std::move(state), stop);
    } catch (const TrainingError& e) {
      save_params(e.last_valid(), p.weights);
      write_log();
      throw;
    }
    losses.insert(losses.end(), r.loss_log.begin(), r.loss_log.end());
    step = r.state.step;
    write_container(p.checkpoint, train_state_to_tensors(r.state));
    write_log();
    log("step " + std::to_string(step) + "  batch loss " + format_double(losses.empty() ? 0.0 : losses.back()));
    state = std::move(r.state);
  }
  save_params(state->params, p.weights);
  const TrainSummary s = evaluate_denoiser(held_out, state->params, schedule, cfg.gaussian_sigma);
  json j;
  j["val_loss"] = s.val_loss;
  j["zero_loss"] = s.zero_loss;
  j["val_loss_top"] = s.val_loss_top;
  j["zero_loss_top"] = s.zero_loss_top;
  j["gauss_loss_top"] = s.gauss_loss_top;
  j["top_count"] = s.top_count;
  j["parameter_count"] = state->params.parameter_count();
  write_file(p.train_summary, json_line(j));
  log("held-out loss " + format_double(s.val_loss) + " vs zero predictor " + format_double(s.zero_loss));
  log("wrote " + p.weights.string());
}

void cmd_estimate(const RunConfig& cfg, const Log& log) {
  validate(cfg);
  const Paths p = paths_for(cfg);
  const DataMatrix data = load_cube(p.cube);
  if (data.bands() != cfg.l()) throw ValidationError("cube has " + std::to_string(data.bands()) + " bands, config says " + std::to_string(cfg.l()));
  if (data.samples() % cfg.p != 0) throw ValidationError("sensing.p does not divide the cube's pixel count");
  std::optional<DiffusionSchedule> schedule;
  std::optional<UNetParams> params;
  if (parse_preconditioner(cfg.method) == PreconditionerKind::diffusion) {
    if (!fs::exists(p.weights)) throw MissingArtifactError("diffusion method needs trained weights", p.weights.string());
    if (!fs::exists(p.schedule)) throw MissingArtifactError("diffusion method needs a schedule", p.schedule.string());
    schedule = load_schedule(p.schedule);
    params = load_params(p.weights);
  }
  const Rng root = Rng(cfg.seed).child(kEstimate);
  ProjectionEnsemble proj;
  if (fs::exists(p.projections)) {
    proj = load_projections(p.projections);
    if (proj.count() != cfg.p || proj.matrices[0].rows() != cfg.l() || proj.matrices[0].cols() != cfg.m) {
      throw ValidationError(p.projections.string() + " does not match the configured l, m, p");
    }
  } else {
    proj = draw_projections(SensingConfig{cfg.l(), cfg.m, cfg.p, 0.0}, root.child(1).seed());
    save_projections(proj, p.projections);
  }
  const SymMatrix s_full = sample_covariance(data);
  const double sigma_n = cfg.sigma_n_rel * std::sqrt(s_full.matrix().trace() / static_cast<double>(cfg.l()));
  const PartitionPlan plan = make_partitions(data.samples(), cfg.p, root.child(2).seed());
  const MeasurementSet meas = measure_all(data, plan, proj, sigma_n, root.child(3).seed());
  const SymMatrix init = cfg.init == InitKind::isotropic ? isotropic_init(meas, proj) : backprojection_init(meas, proj);
  const SolverConfig solver =
      solver_for(cfg, cfg.method, schedule ? &*schedule : nullptr, params ? &*params : nullptr);
  const SolveResult res = pgd_run(Problem{&meas, &proj, cfg.objective}, init, solver, root.child(4).seed());
  write_matrix_csv(res.sigma.matrix(), p.estimate(cfg.method));
  write_trace_csv(res.trace, p.trace(cfg.method));
  log(cfg.method + ": " + std::to_string(res.trace.rows.size()) + " iterations, stop = " + to_string(res.trace.reason) +
      ", objective " + format_double(res.objective));
  if (fs::exists(p.sigma_true)) {
    const SymMatrix truth(read_matrix_csv(p.sigma_true));
    if (truth.dim() == res.sigma.dim()) {
      log("mse vs " + p.sigma_true.filename().string() + " = " + format_double(mse(res.sigma, truth)) +
          ", relative Frobenius error = " + format_double(rel_fro(res.sigma, truth)));
    }
  }
  log("wrote " + p.estimate(cfg.method).string() + " and " + p.trace(cfg.method).string());
}

void cmd_compare(const RunConfig& cfg, const Log& log) {
  validate(cfg);
  const Paths p = paths_for(cfg);
  if (!fs::exists(p.weights)) throw MissingArtifactError("compare needs trained weights", p.weights.string());
  if (!fs::exists(p.schedule)) throw MissingArtifactError("compare needs a schedule", p.schedule.string());
  const DiffusionSchedule schedule = load_schedule(p.schedule);
  const UNetParams params = load_params(p.weights);
  const EvalReport report =
      run_comparison(comparison_scenario(cfg), comparison_methods(cfg, &schedule, &params), cfg.solver,
                     cfg.objective, cfg.cos_threshold);
  for (const std::string& note : report.notes) log(note);
  write_file(p.report, format_report_csv(report_rows(report)));
  if (cfg.heatmaps) emit_report_heatmaps(report, p.heatmaps);
  json j;
  for (const char* m : {"identity", "gaussian", "diffusion"}) {
    j["median_mse"][m] = report.median_mse(m);
    j["median_aligned_eigs"][m] = report.median_aligned(m);
  }
  j["median_ratio"]["diffusion_over_identity"] = report.median_ratio("diffusion", "identity");
  j["median_ratio"]["gaussian_over_identity"] = report.median_ratio("gaussian", "identity");
  write_file(p.summary, json_line(j));
  log("median MSE ratio diffusion/identity = " + format_double(report.median_ratio("diffusion", "identity")) +
      ", gaussian/identity = " + format_double(report.median_ratio("gaussian", "identity")));
  log("wrote " + p.report.string());
}

}  // namespace cgdm
