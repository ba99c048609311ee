#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"
#include "toa/cli.hpp"
#include "toa/inspect.hpp"
#include "toa/io.hpp"
#include "toa/linalg.hpp"
#include "toa/operators.hpp"
#include "toa/probes.hpp"
#include "toa/report.hpp"
#include "toa/svg.hpp"
#include "toa/train.hpp"

namespace toa::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using synthetic::ModelConfig;
using synthetic::SyntheticSpec;
using synthetic::TrainConfig;

constexpr const char* kVersion = "1.0.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path default_out_dir() {
  if (const char* env = std::getenv("TOA_OUT_DIR"); env && *env) return env;
  return "toa_out";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    json j = json::parse(in);
    // A run manifest can be fed back as a config.
    if (j.is_object() && j.contains("config") && j["config"].is_object()) return j["config"];
    return j;
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
}

json versions() {
  return {{"toa", kVersion},
          {"compiler", __VERSION__},
          {"cpp", static_cast<long>(__cplusplus)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION}};
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const json& seeds, const std::vector<fs::path>& outputs, const json& metrics) {
  json files = json::array();
  for (const auto& p : outputs) files.push_back(p.string());
  const json manifest = {{"command", command}, {"config", config},   {"seeds", seeds},
                         {"versions", versions()}, {"outputs", files}, {"metrics", metrics}};
  report::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---- shared option groups ---------------------------------------------------

struct DataFlags {
  bool short_mode = false;
  std::size_t length = 0;
  std::vector<double> periods, amplitudes;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  int regime = 0;
  CLI::Option *length_opt, *periods_opt, *amplitudes_opt, *noise_opt, *seed_opt, *regime_opt;

  void add(CLI::App& app, const char* seed_flag) {
    app.add_flag("--short", short_mode, "Short CI mode: L = 96, periods {8, 24}");
    length_opt = app.add_option("--length", length, "Sequence length L")->check(CLI::PositiveNumber);
    periods_opt = app.add_option("--periods", periods, "Harmonic periods");
    amplitudes_opt = app.add_option("--amplitudes", amplitudes, "Harmonic amplitudes");
    noise_opt = app.add_option("--noise-sigma", noise_sigma, "Observation noise std")
                    ->check(CLI::NonNegativeNumber);
    seed_opt = app.add_option(seed_flag, seed, "Data seed");
    regime_opt = app.add_option("--regime", regime, "Fix the warping regime")->check(CLI::Range(0, 2));
  }

  SyntheticSpec resolve(const json& file) const {
    SyntheticSpec s;
    if (file.contains("data")) s = synthetic::spec_from_json(merged(synthetic::to_json(s), file["data"]));
    if (short_mode) {
      const auto short_spec = SyntheticSpec::short_mode();
      s.length = short_spec.length;
      s.periods = short_spec.periods;
      s.amplitudes.clear();
    }
    if (length_opt->count()) s.length = length;
    if (periods_opt->count()) s.periods = periods;
    if (amplitudes_opt->count()) s.amplitudes = amplitudes;
    if (noise_opt->count()) s.noise_sigma = noise_sigma;
    if (seed_opt->count()) s.seed = seed;
    if (regime_opt->count()) s.regime = regime;
    s.validate();
    return s;
  }

  static json merged(json base, const json& patch) {
    base.merge_patch(patch);
    return base;
  }
};

json section(const json& file, const char* key) {
  if (!file.contains(key)) return json::object();
  if (!file[key].is_object()) throw FormatError(std::string("config section '") + key + "' is not an object");
  return file[key];
}

// ---- generate ---------------------------------------------------------------

struct GenerateCmd {
  DataFlags data;
  std::size_t count = 100;
  std::string config, out_dir;
  CLI::Option* count_opt;

  void add(CLI::App& app) {
    data.add(app, "--seed");
    count_opt = app.add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
    app.add_option("--config", config, "JSON config file (flags override it)");
    app.add_option("--out", out_dir, "Output directory (default $TOA_OUT_DIR or toa_out)");
  }

  int run(std::ostream& out) {
    const json file = config.empty() ? json::object() : read_json_file(config);
    const SyntheticSpec spec = data.resolve(file);
    if (!count_opt->count() && file.contains("count")) count = file["count"].get<std::size_t>();
    if (count == 0) throw UsageError("--count must be positive");
    const fs::path dir = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
    const auto samples = synthetic::generate(spec, count);
    const fs::path dataset = dir / "dataset.csv";
    synthetic::write_dataset_csv(dataset, samples);
    write_manifest(dir, "generate", {{"data", synthetic::to_json(spec)}, {"count", count}},
                   {{"data_seed", spec.seed}}, {dataset}, {{"samples", count}});
    out << "wrote " << count << " samples to " << dataset.string() << "\n";
    return kOk;
  }
};

// ---- train ------------------------------------------------------------------

struct TrainCmd {
  DataFlags data;
  std::string variant_name, config, out_dir, sor = "", sor_shared = "";
  std::size_t steps = 0, batch = 0, eval_samples = 0, eval_every = 0, train_samples = 0;
  std::size_t layers = 0, heads = 0, d_model = 0, mlp_hidden = 0;
  double lr = 0.0, clip = 0.0, p_max = 0.0;
  std::uint64_t seed = 0, sor_seed = 0;
  int threads = 1;
  bool quiet = false;
  CLI::Option *variant_opt, *steps_opt, *batch_opt, *eval_opt, *eval_every_opt, *train_samples_opt,
      *lr_opt, *clip_opt, *seed_opt, *sor_seed_opt, *p_max_opt, *threads_opt, *layers_opt,
      *heads_opt, *d_model_opt, *hidden_opt;

  void add(CLI::App& app) {
    data.add(app, "--data-seed");
    variant_opt = app.add_option("--variant", variant_name, "softmax | toa-softmax | toa-relu | toa-gated")
                      ->check(CLI::IsMember({"softmax", "toa-softmax", "toa-relu", "toa-gated"}));
    steps_opt = app.add_option("--steps", steps, "Optimizer steps");
    batch_opt = app.add_option("--batch-size", batch, "Minibatch size")->check(CLI::PositiveNumber);
    lr_opt = app.add_option("--lr", lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    clip_opt = app.add_option("--grad-clip", clip, "Global gradient norm clip (<= 0 disables)");
    eval_opt = app.add_option("--eval-samples", eval_samples, "Held-out samples")->check(CLI::PositiveNumber);
    eval_every_opt = app.add_option("--eval-every", eval_every, "Steps between evaluations (0: end only)");
    train_samples_opt =
        app.add_option("--train-samples", train_samples, "Fixed training pool size (0: fresh samples)");
    seed_opt = app.add_option("--seed", seed, "Model initialization seed");
    app.add_option("--sor", sor, "Stochastic operator regularization (default on for TOA variants)")
        ->check(CLI::IsMember({"on", "off"}));
    app.add_option("--sor-shared-p", sor_shared, "One drop rate per forward pass")
        ->check(CLI::IsMember({"on", "off"}));
    sor_seed_opt = app.add_option("--sor-seed", sor_seed, "SOR mask seed");
    p_max_opt = app.add_option("--p-max", p_max, "Upper bound of the SOR drop rate");
    layers_opt = app.add_option("--layers", layers)->check(CLI::PositiveNumber);
    heads_opt = app.add_option("--heads", heads)->check(CLI::PositiveNumber);
    d_model_opt = app.add_option("--d-model", d_model)->check(CLI::PositiveNumber);
    hidden_opt = app.add_option("--mlp-hidden", mlp_hidden)->check(CLI::PositiveNumber);
    threads_opt = app.add_option("--threads", threads, "Batch-parallel worker threads")->check(CLI::PositiveNumber);
    app.add_option("--config", config, "JSON config file (flags override it)");
    app.add_option("--out", out_dir, "Output directory (default $TOA_OUT_DIR or toa_out)");
    app.add_flag("--quiet", quiet, "Suppress progress lines");
  }

  int run(std::ostream& out, std::ostream& err) {
    const json file = config.empty() ? json::object() : read_json_file(config);
    const SyntheticSpec spec = data.resolve(file);

    json model_json = synthetic::to_json(ModelConfig{});
    model_json.erase("d_h");
    model_json.erase("d_v");
    model_json.merge_patch(section(file, "model"));
    if (variant_opt->count()) model_json["variant"] = variant_name;
    if (!variant_opt->count() && !section(file, "model").contains("variant"))
      throw UsageError("--variant is required (softmax, toa-softmax, toa-relu or toa-gated)");
    if (layers_opt->count()) model_json["layers"] = layers;
    if (heads_opt->count()) model_json["heads"] = heads;
    if (d_model_opt->count()) model_json["d_model"] = d_model;
    if (hidden_opt->count()) model_json["mlp_hidden"] = mlp_hidden;
    ModelConfig model = synthetic::model_config_from_json(model_json);
    // SOR defaults on for TOA variants unless the config file says otherwise.
    const json file_sor = section(section(file, "model"), "sor");
    if (!file_sor.contains("enabled")) model.sor.enabled = attention::has_offsets(model.variant);
    if (!sor.empty()) model.sor.enabled = sor == "on";
    if (!sor_shared.empty()) model.sor.shared_p = sor_shared == "on";
    if (sor_seed_opt->count()) model.sor.seed = sor_seed;
    if (p_max_opt->count()) model.sor.p_max = p_max;
    model.validate();

    TrainConfig train = synthetic::train_config_from_json(section(file, "train"));
    if (steps_opt->count()) train.steps = steps;
    if (batch_opt->count()) train.batch_size = batch;
    if (lr_opt->count()) train.learning_rate = lr;
    if (clip_opt->count()) train.grad_clip = clip;
    if (eval_opt->count()) train.eval_samples = eval_samples;
    if (eval_every_opt->count()) train.eval_every = eval_every;
    if (train_samples_opt->count()) train.train_samples = train_samples;
    if (seed_opt->count()) train.seed = seed;
    if (threads_opt->count()) train.threads = threads;
    train.validate();

    const fs::path dir = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
    auto progress = [&](const synthetic::MetricRow& row) {
      if (!quiet && row.eval_mse)
        err << "step " << row.step << "  loss " << row.loss << "  eval_mse " << *row.eval_mse << "\n";
    };
    const json config_snapshot = {{"data", synthetic::to_json(spec)},
                                  {"model", synthetic::to_json(model)},
                                  {"train", synthetic::to_json(train)}};
    const json seeds = {{"data_seed", spec.seed},
                        {"eval_seed", synthetic::eval_seed(spec.seed)},
                        {"init_seed", train.seed},
                        {"sor_seed", model.sor.seed}};
    synthetic::TrainResult result;
    try {
      result = synthetic::train(model, train, spec, progress);
    } catch (const synthetic::TrainingDivergence& e) {
      write_manifest(dir, "train", config_snapshot, seeds, {},
                     {{"diverged", true}, {"divergence_step", e.step()}, {"threads", train.threads}});
      throw;
    }

    const fs::path checkpoint = dir / "checkpoint.json";
    const fs::path metrics = dir / "metrics.csv";
    json ckpt = {{"format", "toa-checkpoint-v1"},
                 {"data", synthetic::to_json(spec)},
                 {"train", synthetic::to_json(train)},
                 {"final_eval_mse", result.final_eval_mse},
                 {"model", synthetic::to_json(result.params)}};
    report::write_text(checkpoint, ckpt.dump() + "\n");
    synthetic::write_metrics_csv(metrics, result.curve);
    write_manifest(dir, "train", config_snapshot, seeds, {checkpoint, metrics},
                   {{"initial_eval_mse", result.initial_eval_mse},
                    {"final_eval_mse", result.final_eval_mse},
                    {"steps", train.steps},
                    {"seconds", result.seconds},
                    {"threads", train.threads},
                    {"parameters", synthetic::parameter_count(result.params)}});
    out << "variant " << attention::to_string(model.variant) << "  final eval MSE "
        << io::format_double(result.final_eval_mse) << "  (" << result.seconds << " s)\n";
    return kOk;
  }
};

// ---- theory -----------------------------------------------------------------

struct TheoryCmd {
  std::string which = "all", out_dir;
  bool export_ops = false;

  void add(CLI::App& app) {
    app.add_option("--which", which, "all | caseA..caseE | prop1 | realization | gap")
        ->check(CLI::IsMember({"all", "caseA", "caseB", "caseC", "caseD", "caseE", "prop1",
                               "realization", "gap"}));
    app.add_flag("--export-operators", export_ops, "Also write the canonical operator suite");
    app.add_option("--out", out_dir, "Output directory (default $TOA_OUT_DIR or toa_out)");
  }

  int run(std::ostream& out) {
    const fs::path dir = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
    const json report = theory::theory_report(theory::run_theory(which));
    const fs::path path = dir / ("theory_" + which + ".json");
    report::write_text(path, report.dump(2) + "\n");
    std::vector<fs::path> outputs{path};
    if (export_ops) {
      for (const auto& named : theory::square_operator_suite()) {
        const fs::path stem = dir / "operators" / named.name;
        theory::export_operator(named.op, stem);
        outputs.push_back(stem.string() + ".csv");
      }
    }
    json verdicts = json::object();
    for (const auto& p : report["probes"]) verdicts[p["name"].get<std::string>()] = p["pass"];
    write_manifest(dir, "theory", {{"which", which}, {"export_operators", export_ops}}, json::object(),
                   outputs, {{"pass", report["pass"]}, {"probes", verdicts}});
    for (const auto& p : report["probes"])
      out << (p["pass"].get<bool>() ? "PASS " : "FAIL ") << p["name"].get<std::string>() << "\n";
    return report["pass"].get<bool>() ? kOk : kFailure;
  }
};

// ---- inspect ----------------------------------------------------------------

struct InspectCmd {
  std::string checkpoint, out_dir;
  std::size_t max_cells = 224;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "checkpoint.json written by train")->required();
    app.add_option("--out", out_dir, "Output directory (default $TOA_OUT_DIR or toa_out)");
    app.add_option("--max-cells", max_cells, "Heatmap resolution cap per side")->check(CLI::PositiveNumber);
  }

  int run(std::ostream& out) {
    std::ifstream in(checkpoint);
    if (!in) throw FormatError("cannot open checkpoint " + checkpoint);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError("checkpoint " + checkpoint + ": " + e.what());
    }
    if (!j.is_object() || j.value("format", std::string()) != "toa-checkpoint-v1" ||
        !j.contains("model") || !j.contains("data"))
      throw FormatError("checkpoint " + checkpoint + " is not a toa checkpoint");
    const synthetic::ModelParams params = synthetic::model_from_json(j["model"]);
    SyntheticSpec spec;
    try {
      spec = synthetic::spec_from_json(j["data"]);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint data spec: ") + e.what());
    }
    if (spec.length != params.length) throw FormatError("checkpoint data length disagrees with the model");

    const fs::path dir = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
    std::vector<fs::path> outputs;
    json metrics = {{"operators", json::array()}};

    // One held-out sample per regime; the regime-0 sample doubles as the probe.
    std::vector<synthetic::Sample> samples;
    for (int z = 0; z < 3; ++z) {
      SyntheticSpec s = spec;
      s.regime = z;
      s.seed = synthetic::eval_seed(spec.seed) + static_cast<std::uint64_t>(z);
      samples.push_back(synthetic::generate(s, 1).front());
    }
    for (int z = 0; z < 3; ++z) {
      const fs::path p = dir / ("reconstruction_z" + std::to_string(z) + ".csv");
      const Matrix pred = synthetic::predict(params, samples[static_cast<std::size_t>(z)].noisy);
      report::write_reconstruction_csv(p, samples[static_cast<std::size_t>(z)], pred);
      outputs.push_back(p);
    }

    const std::size_t cutoff = std::max<std::size_t>(1, spec.length / 48);
    for (const auto& op : synthetic::extract_operators(params, samples.front().noisy)) {
      const std::string stem = "layer" + std::to_string(op.layer) + "_head" + std::to_string(op.head);
      const fs::path csv = dir / "operators" / (stem + ".csv");
      const fs::path spectrum = dir / "spectra" / (stem + ".csv");
      const fs::path heat = dir / "heatmaps" / (stem + ".svg");
      io::write_matrix_csv(csv, op.mixing);
      io::write_matrix_csv(spectrum, report::spectra(op.mixing));
      report::write_text(heat, svg::heatmap(op.mixing,
                                            std::string(attention::to_string(params.config.variant)) +
                                                " " + stem,
                                            max_cells));
      outputs.insert(outputs.end(), {csv, spectrum, heat});
      metrics["operators"].push_back({{"layer", op.layer},
                                      {"head", op.head},
                                      {"min_entry", synthetic::min_entry(op.mixing)},
                                      {"max_abs", max_abs(op.mixing)},
                                      {"low_band_energy_fraction",
                                       synthetic::low_band_energy_fraction(op.mixing, cutoff)}});
    }
    metrics["low_band_cutoff_bins"] = cutoff;
    write_manifest(dir, "inspect", {{"checkpoint", checkpoint}, {"max_cells", max_cells}},
                   {{"eval_seed", synthetic::eval_seed(spec.seed)}}, outputs, metrics);
    out << "wrote " << outputs.size() << " files to " << dir.string() << "\n";
    return kOk;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal operator attention workbench", "toa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  GenerateCmd gen;
  TrainCmd train;
  TheoryCmd theory;
  InspectCmd inspect;
  auto* gen_app = app.add_subcommand("generate", "Write a synthetic dataset CSV");
  auto* train_app = app.add_subcommand("train", "Train one variant on the synthetic benchmark");
  auto* theory_app = app.add_subcommand("theory", "Run the operator-theory probes");
  auto* inspect_app = app.add_subcommand("inspect", "Export learned operators, spectra and heatmaps");
  gen.add(*gen_app);
  train.add(*train_app);
  theory.add(*theory_app);
  inspect.add(*inspect_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*gen_app) return gen.run(out);
    if (*train_app) return train.run(out, err);
    if (*theory_app) return theory.run(out);
    if (*inspect_app) return inspect.run(out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const synthetic::TrainingDivergence& e) {
    err << "error: " << e.what() << "\n";
    return kDivergence;
  } catch (const FormatError& e) {
    err << "corrupt input: " << e.what() << "\n";
    return kCorruptInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace toa::cli
