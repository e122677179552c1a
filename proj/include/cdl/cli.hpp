#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cdl/config.hpp"
#include "cdl/csv.hpp"
#include "cdl/density.hpp"
#include "cdl/errors.hpp"
#include "cdl/evaluation.hpp"
#include "cdl/features.hpp"
#include "cdl/registration.hpp"
#include "cdl/svg.hpp"
#include "cdl/synthetic.hpp"
#include "cdl/trainer.hpp"
#include "cdl/verification.hpp"

namespace cdl::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Command plumbing: every CLI flag mirrors a config key; a --config file can
// provide any of them, explicit flags win, defaults fill the rest, and the
// fully resolved config is persisted alongside the outputs.
// ---------------------------------------------------------------------------

struct CommandIo {
  std::map<std::string, std::string> cli_values;  // only flags actually passed
  std::string config_path;
};

inline RunConfig resolve_config(const CommandIo& io,
                                const std::vector<std::pair<std::string, std::string>>& defaults) {
  RunConfig cfg;
  if (!io.config_path.empty()) cfg = RunConfig::from_file(io.config_path);
  for (const auto& [k, v] : io.cli_values) cfg.set(k, v);
  std::set<std::string> known;
  for (const auto& [k, v] : defaults) known.insert(k);
  cfg.reject_unknown(known);
  for (const auto& [k, v] : defaults)
    if (!cfg.has(k)) cfg.set(k, v);
  return cfg;
}

inline std::string prepare_out_dir(const RunConfig& cfg) {
  const std::string out = cfg.raw("out");
  if (out.empty()) throw ValidationError("--out directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  return out;
}

inline std::array<int, 3> parse_dims(const std::string& s) {
  std::istringstream ss(s);
  std::array<int, 3> d{};
  if (!(ss >> d[0] >> d[1] >> d[2])) throw ValidationError("bad dims triple: '" + s + "'");
  return d;
}

inline Spacing parse_spacing(const std::string& s) {
  std::istringstream ss(s);
  Spacing sp{};
  if (!(ss >> sp[0] >> sp[1] >> sp[2])) throw ValidationError("bad spacing triple: '" + s + "'");
  return sp;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::istringstream ss(s);
  std::vector<int> out;
  int v;
  while (ss >> v) out.push_back(v);
  if (out.empty()) throw ValidationError("empty integer list for " + what);
  return out;
}

inline Vec3 volume_center_mm(const Dims& dims, const Spacing& sp) {
  return Vec3(0.5 * (dims[0] - 1) * sp[0], 0.5 * (dims[1] - 1) * sp[1],
              0.5 * (dims[2] - 1) * sp[2]);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& synth_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", ""},
      {"seed", "7"},
      {"threads", "1"},
      {"n_pairs", "10"},
      {"n_train", "10"},
      {"preset", "t1-t2"},
      {"dims", "48 48 48"},
      {"spacing", "2 2 2"},
      {"max_rot_deg", "10"},
      {"max_trans_mm", "5"},
      {"phantom_noise", "0.01"},
  };
  return d;
}

inline int cmd_synth(const RunConfig& cfg) {
  const std::string out = prepare_out_dir(cfg);
  cfg.write(out + "/synth_config.txt");
  const auto seed = static_cast<std::uint64_t>(cfg.get_long("seed", 7));
  const int threads = static_cast<int>(cfg.get_long("threads", 1));
  const int n_pairs = static_cast<int>(cfg.get_long("n_pairs", 10));
  const int n_train = static_cast<int>(cfg.get_long("n_train", 10));
  const std::string preset = cfg.raw("preset");
  const Dims dims = parse_dims(cfg.raw("dims"));
  const Spacing spacing = parse_spacing(cfg.raw("spacing"));
  const double max_rot = cfg.get_double("max_rot_deg", 10.0);
  const double max_trans = cfg.get_double("max_trans_mm", 5.0);
  const double phantom_noise = cfg.get_double("phantom_noise", 0.01);
  if (n_pairs < 0 || n_train < 0) throw ValidationError("pair counts must be >= 0");

  const Vec3 center = volume_center_mm(dims, spacing);
  const DriftSpec drift = drift_preset(preset);
  const Rng root(seed);

  CsvWriter manifest(out + "/manifest.csv");
  manifest.row({"id", "role", "preset", "phantom_seed", "drift_seed", "target", "source",
                "target_mask", "source_mask", "truth"});

  const auto emit_pair = [&](const std::string& id, const std::string& role,
                             std::uint64_t phantom_seed, std::uint64_t drift_seed,
                             const AffineParams& mu_true) {
    PhantomSpec spec = default_phantom_spec(phantom_seed, dims, spacing);
    spec.noise_sigma = phantom_noise;
    const SyntheticPair pair = make_pair(spec, drift, mu_true, {phantom_seed, drift_seed},
                                         threads);
    if (pair.low_overlap_warning)
      std::cerr << "warning: pair " << id << " has < 50% in-frame overlap\n";
    const std::string base = out + "/" + id;
    save_volume(base + "_target.cdlv", pair.target);
    save_volume(base + "_source.cdlv", pair.source);
    save_mask(base + "_target_mask.cdlm", pair.target_mask, spacing);
    save_mask(base + "_source_mask.cdlm", pair.source_mask, spacing);
    save_transform(base + "_truth.txt", pair.mu_true);
    manifest.row({id, role, preset, std::to_string(phantom_seed), std::to_string(drift_seed),
                  id + "_target.cdlv", id + "_source.cdlv", id + "_target_mask.cdlm",
                  id + "_source_mask.cdlm", id + "_truth.txt"});
  };

  for (int i = 0; i < n_train; ++i) {
    const std::uint64_t ps = root.fork(0x10000 + static_cast<std::uint64_t>(i)).seed();
    const std::uint64_t ds = root.fork(0x20000 + static_cast<std::uint64_t>(i)).seed();
    emit_pair("train_" + std::to_string(i), "aligned", ps, ds,
              AffineParams::identity(center, TransformMode::rigid));
  }
  for (int i = 0; i < n_pairs; ++i) {
    const std::uint64_t ps = root.fork(0x30000 + static_cast<std::uint64_t>(i)).seed();
    const std::uint64_t ds = root.fork(0x40000 + static_cast<std::uint64_t>(i)).seed();
    Rng perturb = root.fork(0x50000 + static_cast<std::uint64_t>(i));
    emit_pair("case_" + std::to_string(i), "perturbed", ps, ds,
              random_rigid_perturbation(perturb, max_rot, max_trans, center));
  }
  manifest.close();
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& train_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", ""},
      {"seed", "7"},
      {"threads", "1"},
      {"manifest", ""},
      {"alpha", "0.1"},
      {"beta", "10"},
      {"learning_rate", "0.2"},
      {"decay", "0.95"},
      {"eps", "1e-6"},
      {"max_iters", "500"},
      {"init_scale", "0"},
      {"activation", "sigmoid"},
      {"arch", "16 8"},
      {"feature_mode", "intensity_mean_std"},
      {"n_samples", "20000"},
      {"sample_threshold", "0.01"},
      {"normalize_lo", "0.5"},
      {"normalize_hi", "99.5"},
  };
  return d;
}

inline int cmd_train(const RunConfig& cfg) {
  const std::string out = prepare_out_dir(cfg);
  cfg.write(out + "/train_config.txt");
  const std::string manifest_path = cfg.raw("manifest");
  if (manifest_path.empty()) throw ValidationError("train requires --manifest");

  TrainConfig tc;
  tc.alpha = cfg.get_double("alpha", 0.1);
  tc.beta = cfg.get_double("beta", 10.0);
  tc.learning_rate = cfg.get_double("learning_rate", 0.2);
  tc.decay = cfg.get_double("decay", 0.95);
  tc.eps = cfg.get_double("eps", 1e-6);
  tc.max_iters = static_cast<int>(cfg.get_long("max_iters", 500));
  tc.rng_seed = static_cast<std::uint64_t>(cfg.get_long("seed", 7));
  tc.init_scale = cfg.get_double("init_scale", 0.0);
  tc.validate();
  const int threads = static_cast<int>(cfg.get_long("threads", 1));
  const Activation act = activation_from_name(cfg.raw("activation"));
  const FeatureMode mode = feature_mode_from_name(cfg.raw("feature_mode"));
  const int n_samples = static_cast<int>(cfg.get_long("n_samples", 20000));
  const double sample_threshold = cfg.get_double("sample_threshold", 0.01);
  const double lo = cfg.get_double("normalize_lo", 0.5);
  const double hi = cfg.get_double("normalize_hi", 99.5);

  const CsvTable manifest = read_csv(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  const int col_role = manifest.column("role");
  const int col_target = manifest.column("target");
  const int col_source = manifest.column("source");

  std::vector<std::pair<std::string, std::string>> aligned;
  for (const auto& row : manifest.rows)
    if (row[col_role] == "aligned")
      aligned.emplace_back((root / row[col_target]).string(), (root / row[col_source]).string());
  if (aligned.empty())
    throw ValidationError("manifest has no aligned pairs to train on");

  const int per_pair = std::max(1, n_samples / static_cast<int>(aligned.size()));
  const Rng rng(tc.rng_seed);
  FeatureBatch pooled;
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    const ImageVolume target = normalize_intensities(load_volume(aligned[i].first), lo, hi).volume;
    const ImageVolume source = normalize_intensities(load_volume(aligned[i].second), lo, hi).volume;
    const FeatureField ft = make_feature_field(target, mode, threads);
    const FeatureField fsrc = make_feature_field(source, mode, threads);
    const auto positions = sample_positions(
        target, per_pair, rng.fork(0x7000 + static_cast<std::uint64_t>(i)).seed(),
        sample_threshold);
    const FeatureBatch batch = extract_aligned_batch(ft, fsrc, positions);
    if (pooled.n() == 0) {
      pooled = batch;
    } else {
      const auto stack = [](Matrix& dst, const Matrix& add) {
        Matrix merged(dst.rows() + add.rows(), dst.cols());
        merged << dst, add;
        dst = std::move(merged);
      };
      stack(pooled.target, batch.target);
      stack(pooled.source, batch.source);
    }
  }

  std::vector<int> arch = {feature_dim(mode)};
  for (int w : parse_int_list(cfg.raw("arch"), "arch")) arch.push_back(w);

  const TrainResult result = train_network(pooled, arch, act, tc);

  save_model(out + "/model.json", result.params, tc,
             "manifest=" + fs::path(manifest_path).filename().string() +
                 " pairs=" + std::to_string(aligned.size()) +
                 " n=" + std::to_string(pooled.n()) + " feature_mode=" +
                 feature_mode_name(mode) + " normalize=" + num_str(lo) + "/" + num_str(hi));
  {
    CsvWriter hist(out + "/train_history.csv");
    hist.row({"k", "cost"});
    for (std::size_t k = 0; k < result.history.size(); ++k)
      hist.row({std::to_string(k + 1), num_str(result.history[k])});
  }
  std::cout << "train: initial cost " << num_str(result.initial_cost) << ", final cost "
            << num_str(result.history.back()) << ", "
            << (result.converged ? "converged" : "iteration-capped") << " after "
            << result.history.size() << " iterations\n";
  return result.converged ? 0 : static_cast<int>(ExitCode::iteration_capped);
}

// ---------------------------------------------------------------------------
// register
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& register_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", ""},
      {"seed", "7"},
      {"threads", "1"},
      {"target", ""},
      {"source", ""},
      {"metric", "cdl"},
      {"model", ""},
      {"bins", "75"},
      {"mask_policy", "background"},
      {"mask", ""},
      {"mode", "affine"},
      {"max_iters", "500"},
      {"base_step", "0.2"},
      {"stop_tol", "0"},
      {"n_samples", "5000"},
      {"sample_threshold", "0.01"},
      {"min_valid_fraction", "0.5"},
      {"resample_each_iteration", "false"},
      {"fd_step", "0.5"},
      {"scale_rot", "100"},
      {"scale_trans", "1"},
      {"scale_scale", "100"},
      {"scale_shear", "100"},
      {"normalize_lo", "0.5"},
      {"normalize_hi", "99.5"},
      {"truth_target_mask", ""},
      {"truth_source_mask", ""},
  };
  return d;
}

inline int cmd_register(const RunConfig& cfg) {
  const std::string out = prepare_out_dir(cfg);
  cfg.write(out + "/register_config.txt");
  const std::string target_path = cfg.raw("target");
  const std::string source_path = cfg.raw("source");
  if (target_path.empty() || source_path.empty())
    throw ValidationError("register requires --target and --source");
  const int threads = static_cast<int>(cfg.get_long("threads", 1));
  const double lo = cfg.get_double("normalize_lo", 0.5);
  const double hi = cfg.get_double("normalize_hi", 99.5);

  const ImageVolume target = normalize_intensities(load_volume(target_path), lo, hi).volume;
  const ImageVolume source = normalize_intensities(load_volume(source_path), lo, hi).volume;

  MetricSamplingConfig sampling;
  sampling.n_samples = static_cast<int>(cfg.get_long("n_samples", 5000));
  sampling.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 7));
  sampling.sample_threshold = cfg.get_double("sample_threshold", 0.01);
  sampling.min_valid_fraction = cfg.get_double("min_valid_fraction", 0.5);
  sampling.threads = threads;

  OptimizerConfig opt;
  opt.max_iters = static_cast<int>(cfg.get_long("max_iters", 500));
  opt.base_step = cfg.get_double("base_step", 0.2);
  opt.stop_tol = cfg.get_double("stop_tol", 0.0);
  opt.resample_each_iteration = cfg.get_bool("resample_each_iteration", false);
  opt.resample_seed = sampling.seed;
  const double s_rot = cfg.get_double("scale_rot", 100);
  const double s_trans = cfg.get_double("scale_trans", 1);
  const double s_scale = cfg.get_double("scale_scale", 100);
  const double s_shear = cfg.get_double("scale_shear", 100);
  opt.param_scaling << s_rot, s_rot, s_rot, s_trans, s_trans, s_trans, s_scale, s_scale,
      s_scale, s_shear, s_shear, s_shear;

  const std::string mode_name = cfg.raw("mode");
  TransformMode mode;
  if (mode_name == "affine")
    mode = TransformMode::affine;
  else if (mode_name == "rigid")
    mode = TransformMode::rigid;
  else
    throw ValidationError("mode must be affine or rigid");

  const Vec3 center = volume_center_mm(target.dims, target.spacing);
  const AffineParams initial = AffineParams::identity(center, mode);

  std::unique_ptr<RegistrationMetric> metric;
  const std::string metric_name = cfg.raw("metric");
  if (metric_name == "cdl") {
    const std::string model_path = cfg.raw("model");
    if (model_path.empty()) throw ValidationError("cdl metric requires --model");
    const LoadedModel model = load_model(model_path);
    const FeatureMode mode_feat = model.params.input_dim() == 1
                                      ? FeatureMode::intensity
                                      : FeatureMode::intensity_mean_std;
    metric = std::make_unique<CdlMetric>(model.params, model.train_config, target, source,
                                         mode_feat, sampling);
  } else if (metric_name == "hist-mi") {
    const int bins = static_cast<int>(cfg.get_long("bins", 75));
    const std::string policy_name = cfg.raw("mask_policy");
    MaskPolicy policy;
    BinaryMask mask;
    const BinaryMask* mask_ptr = nullptr;
    if (policy_name == "none") {
      policy = MaskPolicy::none;
      sampling.threshold_sampling = false;
    } else if (policy_name == "background") {
      policy = MaskPolicy::background;
    } else if (policy_name == "supplied") {
      policy = MaskPolicy::supplied;
      const std::string mask_path = cfg.raw("mask");
      if (mask_path.empty()) throw ValidationError("supplied mask policy requires --mask");
      mask = load_mask(mask_path);
      mask_ptr = &mask;
    } else {
      throw ValidationError("mask_policy must be none, background, or supplied");
    }
    metric = std::make_unique<HistMiMetric>(target, source, bins, sampling,
                                            opt.param_scaling, cfg.get_double("fd_step", 0.5),
                                            policy, mask_ptr);
  } else {
    throw ValidationError("metric must be cdl or hist-mi");
  }

  DiceProbe probe;
  BinaryMask truth_target, truth_source;
  const std::string tt = cfg.raw("truth_target_mask");
  const std::string ts = cfg.raw("truth_source_mask");
  if (!tt.empty() && !ts.empty()) {
    truth_target = load_mask(tt);
    truth_source = load_mask(ts);
    const Spacing sp = target.spacing;
    const Dims dims = target.dims;
    probe = [&truth_target, &truth_source, sp, dims](const AffineParams& mu) {
      return dice(truth_target, resample_mask(truth_source, sp, to_matrix(mu), dims, sp));
    };
  } else if (!tt.empty() || !ts.empty()) {
    throw ValidationError("truth dice tracking needs both truth masks");
  }

  try {
    const RegistrationResult result = register_volumes(*metric, initial, opt, probe);
    save_transform(out + "/transform.txt", result.params);
    save_trace(out + "/trace.csv", result.trace);
    double best = result.trace.rows.front().cost;
    for (const auto& r : result.trace.rows) best = std::max(best, r.cost);
    std::cout << "register: best cost " << num_str(best) << " over "
              << result.trace.rows.size() - 1 << " iterations\n";
  } catch (const RegistrationError& e) {
    save_trace(out + "/trace.csv", e.trace());
    throw;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& evaluate_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", ""},  {"seed", "7"},  {"threads", "1"},
      {"manifest", ""}, {"runs", ""}, {"svg", "false"},
  };
  return d;
}

struct MethodRun {
  std::string method;
  std::string dir;
};

inline std::vector<MethodRun> parse_runs(const std::string& spec) {
  std::vector<MethodRun> runs;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ValidationError("bad --runs entry (want method=dir): '" + item + "'");
    runs.push_back({item.substr(0, eq), item.substr(eq + 1)});
  }
  if (runs.empty()) throw ValidationError("--runs must name at least one method=dir");
  return runs;
}

inline int cmd_evaluate(const RunConfig& cfg) {
  const std::string out = prepare_out_dir(cfg);
  cfg.write(out + "/evaluate_config.txt");
  const std::string manifest_path = cfg.raw("manifest");
  if (manifest_path.empty()) throw ValidationError("evaluate requires --manifest");
  const auto runs = parse_runs(cfg.raw("runs"));
  const bool svg = cfg.get_bool("svg", false);

  const CsvTable manifest = read_csv(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  const int col_id = manifest.column("id");
  const int col_role = manifest.column("role");
  const int col_tmask = manifest.column("target_mask");
  const int col_smask = manifest.column("source_mask");
  const int col_target = manifest.column("target");

  struct Case {
    std::string id;
    BinaryMask target_mask, source_mask;
    Spacing spacing;
    Dims dims;
  };
  std::vector<Case> cases;
  for (const auto& row : manifest.rows) {
    if (row[col_role] != "perturbed") continue;
    Case c;
    c.id = row[col_id];
    c.target_mask = load_mask((root / row[col_tmask]).string());
    c.source_mask = load_mask((root / row[col_smask]).string());
    const ImageVolume target = load_volume((root / row[col_target]).string());
    c.spacing = target.spacing;
    c.dims = target.dims;
    cases.push_back(std::move(c));
  }
  if (cases.empty()) throw ValidationError("manifest has no perturbed cases to evaluate");

  std::vector<CaseResult> rows;
  std::map<std::string, std::vector<double>> final_dice_by_method;
  std::map<std::string, std::vector<DiceTrace>> traces_by_method;
  std::vector<SvgSeries> scatter_series;
  const std::array<const char*, 4> palette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  CsvWriter scatter(out + "/scatter.csv");
  scatter.row({"case", "method", "initial_dice", "final_dice"});

  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& run = runs[r];
    SvgSeries series;
    series.label = run.method;
    series.color = palette[r % palette.size()];
    for (const Case& c : cases) {
      const std::string case_dir = run.dir + "/" + c.id;
      const AffineParams mu = load_transform(case_dir + "/transform.txt");
      const BinaryMask registered =
          resample_mask(c.source_mask, c.spacing, to_matrix(mu), c.dims, c.spacing);
      CaseResult res;
      res.case_id = c.id;
      res.method = run.method;
      res.initial_dice = dice(c.target_mask, c.source_mask);
      res.final_dice = dice(c.target_mask, registered);
      res.initial_hd_mm = hausdorff_mm(c.target_mask, c.source_mask, c.spacing);
      res.final_hd_mm = hausdorff_mm(c.target_mask, registered, c.spacing);
      rows.push_back(res);
      final_dice_by_method[run.method].push_back(res.final_dice);
      scatter.row({c.id, run.method, num_str(res.initial_dice), num_str(res.final_dice)});
      series.x.push_back(res.initial_dice);
      series.y.push_back(res.final_dice);

      // per-iteration dice from the trace, when register ran with truth masks
      const CsvTable trace = read_csv(case_dir + "/trace.csv");
      const int col_dice = trace.column("dice");
      DiceTrace dt;
      dt.case_id = c.id;
      for (const auto& trow : trace.rows) {
        if (trow[col_dice].empty()) break;
        dt.dice.push_back(parse_double(trow[col_dice], "dice"));
      }
      if (!dt.dice.empty()) traces_by_method[run.method].push_back(std::move(dt));
    }
    scatter_series.push_back(std::move(series));
  }
  scatter.close();
  save_report_csv(out + "/report.csv", rows);

  std::vector<SvgSeries> gain_series;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& run = runs[r];
    const auto it = traces_by_method.find(run.method);
    if (it == traces_by_method.end() || it->second.empty()) continue;
    const GainCurve curve = gain_curve(it->second);
    save_gain_curve(out + "/gain_" + run.method + ".csv", curve);
    SvgSeries s;
    s.label = run.method;
    s.color = palette[r % palette.size()];
    for (std::size_t k = 0; k < curve.mean_gain.size(); ++k) {
      s.x.push_back(static_cast<double>(k));
      s.y.push_back(curve.mean_gain[k]);
    }
    gain_series.push_back(std::move(s));
  }

  // summary block mirroring the method x metric table layout
  {
    std::ofstream sum(out + "/summary.txt", std::ios::binary);
    if (!sum) throw IoError("cannot open summary.txt");
    sum << "Registration evaluation over " << cases.size() << " perturbed pairs\n\n";
    sum << "method          dice initial     dice final       hd_mm initial    hd_mm final\n";
    for (const auto& run : runs) {
      std::vector<double> di, df, hi, hf;
      for (const auto& row : rows)
        if (row.method == run.method) {
          di.push_back(row.initial_dice);
          df.push_back(row.final_dice);
          hi.push_back(row.initial_hd_mm);
          hf.push_back(row.final_hd_mm);
        }
      const auto fmt = [](const Aggregate& a) {
        std::ostringstream os;
        os << num_str(std::round(a.mean * 1000) / 1000) << "+/-"
           << num_str(std::round(a.sd * 1000) / 1000);
        return os.str();
      };
      sum << run.method;
      for (std::size_t pad = run.method.size(); pad < 16; ++pad) sum << ' ';
      sum << fmt(aggregate(di));
      sum << "     " << fmt(aggregate(df));
      sum << "     " << fmt(aggregate(hi));
      sum << "     " << fmt(aggregate(hf)) << "\n";
    }
    sum << "\nPairwise Wilcoxon rank-sum on final Dice:\n";
    for (std::size_t a = 0; a < runs.size(); ++a)
      for (std::size_t b = a + 1; b < runs.size(); ++b) {
        const auto& xa = final_dice_by_method[runs[a].method];
        const auto& xb = final_dice_by_method[runs[b].method];
        sum << "  " << runs[a].method << " vs " << runs[b].method << ": ";
        if (xa.size() < 3 || xb.size() < 3) {
          sum << "p = n/a (needs >= 3 cases per method)\n";
        } else {
          const auto res = ranksum(xa, xb);
          sum << "p = " << num_str(res.p) << (res.all_tied ? " (all tied)" : "") << "\n";
        }
      }
  }

  if (svg) {
    save_svg_scatter(out + "/scatter.svg", scatter_series, "initial Dice", "final Dice");
    if (!gain_series.empty())
      save_svg_lines(out + "/gain.svg", gain_series, "iteration", "mean Dice gain");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& verify_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", ""},
      {"seed", "7"},
      {"threads", "1"},
      {"network_seeds", "20"},
      {"metric_seeds", "3"},
  };
  return d;
}

inline int cmd_verify(const RunConfig& cfg) {
  const std::string out = prepare_out_dir(cfg);
  cfg.write(out + "/verify_config.txt");
  const auto rows = run_verify_suite(static_cast<int>(cfg.get_long("network_seeds", 20)),
                                     static_cast<int>(cfg.get_long("metric_seeds", 3)),
                                     static_cast<int>(cfg.get_long("threads", 1)));
  CsvWriter csv(out + "/verify.csv");
  csv.row({"check", "measured", "tolerance", "pass"});
  bool all_pass = true;
  for (const auto& row : rows) {
    csv.row({row.name, num_str(row.measured), num_str(row.tolerance),
             row.pass ? "true" : "false"});
    std::cout << (row.pass ? "PASS " : "FAIL ") << row.name << " measured="
              << num_str(row.measured) << " tol=" << num_str(row.tolerance) << "\n";
    all_pass = all_pass && row.pass;
  }
  return all_pass ? 0 : static_cast<int>(ExitCode::numerical);
}

// ---------------------------------------------------------------------------
// densitycheck
// ---------------------------------------------------------------------------

inline const std::vector<std::pair<std::string, std::string>>& density_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"out", ""},
      {"seed", "7"},
      {"threads", "1"},
      {"n_samples", "100000"},
  };
  return d;
}

inline int cmd_densitycheck(const RunConfig& cfg) {
  const std::string out = prepare_out_dir(cfg);
  cfg.write(out + "/densitycheck_config.txt");
  const int n = static_cast<int>(cfg.get_long("n_samples", 100000));
  const auto seed = static_cast<std::uint64_t>(cfg.get_long("seed", 7));
  CsvWriter csv(out + "/density.csv");
  csv.row({"mu", "sigma", "act", "skew", "kurtosis", "ks_closed_form", "ks_gaussian"});
  const Rng root(seed);
  std::uint64_t cell = 0;
  for (const double mu : {-1.0, 0.0, 1.0}) {
    for (const double sigma : {0.1, 0.5, 1.0, 2.0}) {
      for (const Activation act : {Activation::sigmoid, Activation::tanh}) {
        const auto rep = gaussianity_check({mu, sigma}, act, n, root.fork(cell++).seed());
        csv.row({num_str(mu), num_str(sigma), activation_name(act), num_str(rep.skewness),
                 num_str(rep.excess_kurtosis), num_str(rep.ks_closed_form),
                 num_str(rep.ks_gaussian)});
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// dispatcher
// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Communal-domain registration pipeline for drifted volumes"};
  app.require_subcommand(1);

  struct Command {
    std::string name;
    const std::vector<std::pair<std::string, std::string>>& defaults;
    int (*fn)(const RunConfig&);
    CommandIo io;
    CLI::App* sub = nullptr;
  };
  std::vector<Command> commands = {
      {"synth", synth_defaults(), cmd_synth, {}, nullptr},
      {"train", train_defaults(), cmd_train, {}, nullptr},
      {"register", register_defaults(), cmd_register, {}, nullptr},
      {"evaluate", evaluate_defaults(), cmd_evaluate, {}, nullptr},
      {"verify", verify_defaults(), cmd_verify, {}, nullptr},
      {"densitycheck", density_defaults(), cmd_densitycheck, {}, nullptr},
  };

  for (auto& cmd : commands) {
    cmd.sub = app.add_subcommand(cmd.name, "");
    cmd.sub->add_option("--config", cmd.io.config_path, "key = value config file");
    for (const auto& [key, fallback] : cmd.defaults) {
      (void)fallback;
      const std::string k = key;
      CommandIo* io = &cmd.io;
      cmd.sub->add_option_function<std::string>(
          "--" + k, [io, k](const std::string& v) { io->cli_values[k] = v; }, "");
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::validation);
  }

  try {
    for (auto& cmd : commands) {
      if (cmd.sub->parsed()) {
        const RunConfig cfg = resolve_config(cmd.io, cmd.defaults);
        return cmd.fn(cfg);
      }
    }
    throw ValidationError("no subcommand given");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::numerical);
  }
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace cdl::cli
