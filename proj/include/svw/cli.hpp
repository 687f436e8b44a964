#pragma once

// Command-line front end: argument parsing, configuration merging and the
// subcommand drivers. tools/svw.cpp is a thin main() around main_entry().
//
// Config files are flat `key = value` text; flags override file values and
// unknown keys or flags are usage errors. Exit codes: 0 ok, 2 usage, 3 data,
// 4 numeric divergence. Failures print one line
//   error: category=<usage|data|numeric> message=<text>

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "svw/eval.hpp"
#include "svw/probe.hpp"
#include "svw/training.hpp"

namespace svw::cli {

struct HelpRequested {
  std::string text;
};

struct RunConfig {
  std::string command;
  std::uint64_t seed = 1;
  bool seed_given = false;
  int jobs = 1;
  fs::path config;
  fs::path spec;
  fs::path out;
  fs::path norm;
  std::string preset;
  std::string split;
  std::string encoder;
  std::string model_id;
  std::vector<std::string> datasets;
  std::vector<std::string> models;
  std::vector<std::string> eval_sets;
  /// Flag values that override config-file keys.
  KeyValueConfig overrides;
  int index = 0;
  int sequence = 0;
  int horizon = 80;
  int step = 80;
  int frames = 100;
  int warmup = 1;
  int trials = 5;
};

inline const std::vector<std::string>& spec_keys() {
  static const std::vector<std::string> k{"preset", "name",         "init_kind",      "depth_m",  "tank_min_m",
                                          "tank_max_m", "azimuth",  "n_sequences",    "seed",     "grid_n",
                                          "n_frames",   "dt_out",   "kin_viscosity",  "viscous",  "amplitude",
                                          "width_fraction", "altitude_deg", "exaggeration", "frame_size"};
  return k;
}

inline const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> k{"arch", "channel_scale", "latent_width", "n_layers", "init_seed"};
  return k;
}

inline const std::vector<std::string>& probe_keys() {
  static const std::vector<std::string> k{"epochs", "batch", "lr", "windows_per_sequence", "width", "seed"};
  return k;
}

/// File keys overlaid with flag overrides; every key must be in `allowed`.
inline KeyValueConfig merged_config(const RunConfig& rc, const std::vector<std::string>& allowed) {
  KeyValueConfig k;
  if (!rc.config.empty()) k = KeyValueConfig::load(rc.config.string());
  for (const auto& [key, v] : rc.overrides.values()) k.set(key, v);
  if (rc.seed_given) k.set("seed", std::to_string(rc.seed));
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, v] : k.values()) {
    if (!ok.count(key)) throw UsageError(rc.command + ": unknown config key '" + key + "'");
  }
  return k;
}

inline RunConfig parse_args(const std::vector<std::string>& args) {
  RunConfig rc;
  CLI::App app{"Shallow-water surrogate toolkit: simulation, datasets, training, evaluation and probing.", "svw"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::vector<std::string> sets;
  auto common = [&](CLI::App* s) {
    s->add_option("--seed", rc.seed, "Seed for every random choice")->each([&](const std::string&) { rc.seed_given = true; });
    s->add_option("--jobs", rc.jobs, "Worker threads for per-sequence work")->check(CLI::PositiveNumber);
    s->add_option("--set", sets, "Override a config key (key=value), repeatable");
  };
  auto override_flag = [&](CLI::App* s, const std::string& flag, const std::string& key, const std::string& help) {
    s->add_option_function<std::string>(flag, [&rc, key](const std::string& v) { rc.overrides.set(key, v); }, help);
  };

  auto* sim = app.add_subcommand("simulate", "Simulate and render one sequence of a dataset spec");
  common(sim);
  sim->add_option("--spec", rc.spec, "Dataset spec file")->check(CLI::ExistingFile);
  sim->add_option("--preset", rc.preset, "Dataset preset used when no spec is given");
  sim->add_option("--index", rc.index, "Sequence index within the spec")->check(CLI::NonNegativeNumber);
  sim->add_option("--out", rc.out, "Output directory")->required();

  auto* gen = app.add_subcommand("gen-dataset", "Generate a dataset directory");
  common(gen);
  gen->add_option("--spec", rc.spec, "Dataset spec file")->check(CLI::ExistingFile);
  gen->add_option("--preset", rc.preset, "Dataset preset");
  override_flag(gen, "--n-sequences", "n_sequences", "Number of sequences");
  override_flag(gen, "--name", "name", "Dataset name (directory under --out)");
  gen->add_option("--out", rc.out, "Root directory; the dataset goes to <out>/<name>")->required();

  auto* tr = app.add_subcommand("train", "Train a forecaster");
  common(tr);
  tr->add_option("--dataset", rc.datasets, "Dataset directory")->required()->expected(1);
  tr->add_option("--config", rc.config, "Training/model config file")->check(CLI::ExistingFile);
  override_flag(tr, "--arch", "arch", "lstm_baseline | convlstm | predrnnpp | unet");
  override_flag(tr, "--max-epochs", "max_epochs", "Epoch limit");
  override_flag(tr, "--budget-seconds", "budget_seconds", "Wall-clock budget");
  override_flag(tr, "--lr", "lr", "Initial learning rate");
  tr->add_option("--out", rc.out, "Output model directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Rollout RMSE curve and naive baselines");
  common(ev);
  ev->add_option("--model", rc.models, "Model directory")->required()->expected(1);
  ev->add_option("--dataset", rc.datasets, "Dataset directory")->required()->expected(1);
  ev->add_option("--split", rc.split, "train | val | test | all")->default_val("test");
  ev->add_option("--horizon", rc.horizon, "Rollout length")->check(CLI::PositiveNumber);
  ev->add_option("--norm", rc.norm, "NormStats file that must match the model")->check(CLI::ExistingFile);
  ev->add_option("--model-id", rc.model_id, "Label for the report");
  ev->add_option("--out", rc.out, "Output directory")->required();

  auto* ge = app.add_subcommand("generalize", "RMSE at 20/40/60/80 on several datasets");
  common(ge);
  ge->add_option("--model", rc.models, "Model directory")->required()->expected(1);
  ge->add_option("--dataset", rc.datasets, "Dataset directory, optionally dir:split; repeatable")->required();
  ge->add_option("--out", rc.out, "Output directory")->required();

  auto* be = app.add_subcommand("bench", "Time solver stepping against model rollout");
  common(be);
  be->add_option("--model", rc.models, "Model directory; repeatable")->required();
  be->add_option("--spec", rc.spec, "Dataset spec for the solver")->check(CLI::ExistingFile);
  be->add_option("--preset", rc.preset, "Dataset preset for the solver");
  be->add_option("--frames", rc.frames, "Frames per trial")->check(CLI::PositiveNumber);
  be->add_option("--warmup", rc.warmup, "Untimed warm-up runs")->check(CLI::NonNegativeNumber);
  be->add_option("--trials", rc.trials, "Timed trials (>= 5)");
  be->add_option("--out", rc.out, "Output directory")->required();

  auto* re = app.add_subcommand("reconstruct", "Cumulative feature-map reconstruction of one output frame");
  common(re);
  re->add_option("--model", rc.models, "Model directory")->required()->expected(1);
  re->add_option("--dataset", rc.datasets, "Dataset directory")->required()->expected(1);
  re->add_option("--split", rc.split, "Split holding the sequence")->default_val("test");
  re->add_option("--sequence", rc.sequence, "Position within the split")->check(CLI::NonNegativeNumber);
  re->add_option("--step", rc.step, "Rollout step to decompose")->check(CLI::PositiveNumber);
  re->add_option("--out", rc.out, "Output directory")->required();

  auto* pr = app.add_subcommand("probe", "Tank-size regression from a frozen U-Net encoder");
  common(pr);
  pr->add_option("--encoder", rc.encoder, "pretrained | random")->required()->check(CLI::IsMember({"pretrained", "random"}));
  pr->add_option("--checkpoint", rc.models, "Model directory or its params file")->required()->expected(1);
  pr->add_option("--dataset", rc.datasets, "Training dataset (its test split is evaluated)")->required()->expected(1);
  pr->add_option("--eval", rc.eval_sets, "Extra dataset evaluated on all sequences; repeatable");
  pr->add_option("--config", rc.config, "Probe config file")->check(CLI::ExistingFile);
  pr->add_option("--out", rc.out, "Output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested{app.help()};
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequested{app.help("", CLI::AppFormatMode::All)};
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  rc.command = app.get_subcommands().front()->get_name();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    rc.overrides.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!rc.spec.empty() && !rc.preset.empty()) throw UsageError(rc.command + ": give --spec or --preset, not both");
  return rc;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

inline DatasetSpec resolve_spec(const RunConfig& rc) {
  KeyValueConfig k;
  if (!rc.spec.empty()) k = KeyValueConfig::load(rc.spec.string());
  if (!rc.preset.empty()) k.set("preset", rc.preset);
  for (const auto& [key, v] : rc.overrides.values()) k.set(key, v);
  if (rc.seed_given) k.set("seed", std::to_string(rc.seed));
  const std::set<std::string> ok(spec_keys().begin(), spec_keys().end());
  for (const auto& [key, v] : k.values()) {
    if (!ok.count(key)) throw UsageError(rc.command + ": unknown spec key '" + key + "'");
  }
  if (!k.has("preset") && rc.spec.empty()) k.set("preset", "main");
  return DatasetSpec::from_config(k);
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  io::write_file_atomic(path, text);
}

inline std::string norm_text(const NormStats& n) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "mean=%.17g std=%.17g", n.mean, n.std);
  return buf;
}

/// Per-sequence rollout curves. With jobs > 1 each worker loads its own copy
/// of the model; chunks are whole batches, so the result does not depend on jobs.
inline std::vector<std::vector<double>> curves(const fs::path& model_dir, Forecaster<float>& model,
                                               const std::vector<SequenceRecord>& seqs, int horizon, int jobs) {
  constexpr int kBatch = 16;
  const std::size_t n_batches = (seqs.size() + kBatch - 1) / kBatch;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n_batches);
  if (workers <= 1) return model_curves(model, seqs, horizon, kBatch);
  const std::size_t per = (n_batches + workers - 1) / workers * kBatch;
  std::vector<std::vector<std::vector<double>>> parts(workers);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t b = w * per, e = std::min(seqs.size(), b + per);
        if (b >= e) return;
        auto copy = load_model<float>(model_dir);
        const std::vector<SequenceRecord> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(b),
                                                seqs.begin() + static_cast<std::ptrdiff_t>(e));
        parts[w] = model_curves(*copy.model, chunk, horizon, kBatch);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<std::vector<double>> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline DatasetSpec dataset_spec(const Dataset& ds) {
  return DatasetSpec::from_config(KeyValueConfig::load((ds.directory / "spec.cfg").string()));
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_simulate(const RunConfig& rc, std::ostream& out) {
  const auto spec = resolve_spec(rc);
  if (rc.index >= spec.n_sequences) throw UsageError("simulate: --index must be below n_sequences");
  const auto rec = generate_sequence(spec, rc.index);
  fs::create_directories(rc.out);
  write_record(rc.out / sequence_filename(rc.index), rec);
  for (int f = 0; f < rec.n_frames(); ++f) {
    Image img(static_cast<int>(rec.meta.frame_size));
    const auto src = rec.frame(f);
    std::copy(src.begin(), src.end(), img.values().begin());
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03d.pgm", f);
    write_pgm((rc.out / name).string(), img);
  }
  out << "simulate: " << rec.n_frames() << " frames, tank " << rec.meta.tank_size_m << " m, written to " << rc.out.string()
      << "\n";
  return 0;
}

inline int cmd_gen_dataset(const RunConfig& rc, std::ostream& out) {
  const auto spec = resolve_spec(rc);
  const auto rep = generate(spec, rc.out, rc.jobs, &out);
  out << "gen-dataset: " << rep.written.size() << " sequences (" << rep.skipped.size() << " skipped) in "
      << rep.directory.string() << ", split " << rep.split.train.size() << "/" << rep.split.val.size() << "/"
      << rep.split.test.size() << ", " << norm_text(rep.norm) << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& rc, std::ostream& out) {
  std::vector<std::string> allowed = TrainConfig::keys();
  allowed.insert(allowed.end(), model_keys().begin(), model_keys().end());
  const auto k = merged_config(rc, allowed);
  const Arch arch = parse_arch(k.get("arch", "unet"));
  const TrainConfig tc = TrainConfig::from_config(k, TrainConfig::defaults(arch));
  const auto ds = load_dataset(rc.datasets.front());

  ModelConfig mc = ModelConfig::desk(arch);
  mc.n_in = tc.n_in;
  mc.n_out = tc.n_out;
  mc.frame_size = static_cast<int>(ds.records.begin()->second.meta.frame_size);
  mc.channel_scale = k.get_double("channel_scale", mc.channel_scale);
  mc.latent_width = static_cast<int>(k.get_int("latent_width", mc.latent_width));
  mc.n_layers = static_cast<int>(k.get_int("n_layers", mc.n_layers));
  mc.init_seed = static_cast<std::uint64_t>(k.get_int("init_seed", static_cast<long long>(child_seed(tc.seed, 0x1417) >> 1)));
  mc.validate();
  auto model = make_model<float>(mc);

  fs::create_directories(rc.out);
  auto record = tc.to_config();
  const auto model_record = mc.to_config();
  for (const auto& [key, v] : model_record.values()) record.set(key, v);
  io::write_file_atomic(rc.out / "train.cfg", record.to_string());
  const auto hist = train(*model, ds, tc, TrainOptions{rc.out, &out});
  out << "train: " << to_string(arch) << " best epoch " << hist.best_epoch << " val_rmse50 " << format_number(hist.best_val)
      << (hist.budget_stop ? " (budget reached)" : "") << ", model in " << rc.out.string() << "\n";
  return 0;
}

inline int cmd_evaluate(const RunConfig& rc, std::ostream& out) {
  merged_config(rc, {"seed"});
  const fs::path model_dir = rc.models.front();
  auto loaded = load_model<float>(model_dir);
  const auto ds = load_dataset(rc.datasets.front());
  const NormStats given = rc.norm.empty() ? ds.norm : NormStats::load(rc.norm.string());
  if (!(given == loaded.norm)) {
    throw DataError("NormStats mismatch: model was trained with " + norm_text(loaded.norm) + " but " +
                    (rc.norm.empty() ? ds.directory / "norm.txt" : rc.norm).string() + " has " + norm_text(given));
  }
  const auto seqs = ds.normalized(rc.split, loaded.norm);
  const int n = loaded.model->n_in();
  const std::string id = rc.model_id.empty() ? to_string(loaded.model->config().arch) : rc.model_id;
  const auto rep = make_report(ds.name, id, curves(model_dir, *loaded.model, seqs, rc.horizon, rc.jobs));
  const auto prev = baseline_previous(seqs, n, rc.horizon);
  const auto spec = dataset_spec(ds);
  const auto flat = baseline_flat(seqs, n, rc.horizon, loaded.norm, spec.render_params(spec.azimuth_deg));
  write_text(rc.out / "rmse.csv", rep.to_csv());
  write_text(rc.out / "baseline_previous.csv", prev.to_csv());
  write_text(rc.out / "baseline_flat.csv", flat.to_csv());
  out << "evaluate: " << id << " on " << ds.name << "/" << rc.split << " (" << seqs.size() << " sequences)\n";
  for (const auto& [step, v] : rep.summary()) {
    out << "  t=" << step << "  model " << format_number(v) << "  previous " << format_number(prev.at(step)) << "  flat "
        << format_number(flat.at(step)) << "\n";
  }
  return 0;
}

inline int cmd_generalize(const RunConfig& rc, std::ostream& out) {
  merged_config(rc, {"seed"});
  const fs::path model_dir = rc.models.front();
  auto loaded = load_model<float>(model_dir);
  GeneralizationReport rep;
  for (const auto& arg : rc.datasets) {
    std::string dir = arg, part = "all";
    if (const auto colon = arg.rfind(':'); colon != std::string::npos && colon > 0) {
      dir = arg.substr(0, colon);
      part = arg.substr(colon + 1);
    }
    const auto ds = load_dataset(dir);
    const auto seqs = ds.normalized(part, loaded.norm);
    const std::string name = part == "all" ? ds.name : ds.name + "/" + part;
    const auto r = make_report(name, "", curves(model_dir, *loaded.model, seqs, kSummarySteps.back(), rc.jobs));
    GeneralizationRow row{name, {}};
    for (std::size_t i = 0; i < kSummarySteps.size(); ++i) row.rmse[i] = r.at(kSummarySteps[i]);
    rep.rows.push_back(row);
  }
  write_text(rc.out / "generalization.csv", rep.to_csv());
  out << rep.to_csv();
  return 0;
}

inline int cmd_bench(const RunConfig& rc, std::ostream& out) {
  std::vector<LoadedModel<float>> models;
  for (const auto& m : rc.models) models.push_back(load_model<float>(m));
  RunConfig sr = rc;
  if (sr.spec.empty() && !sr.overrides.has("frame_size")) sr.overrides.set("frame_size", std::to_string(models.front().model->frame_size()));
  const auto spec = resolve_spec(sr);
  std::vector<NamedModel> named;
  std::set<std::string> used;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string name = to_string(models[i].model->config().arch);
    if (!used.insert(name).second) name += "_" + std::to_string(i);
    named.push_back({name, models[i].model.get()});
  }
  const auto rep = speed_bench(named, spec, rc.frames, rc.warmup, rc.trials);
  write_text(rc.out / "speed.csv", rep.to_csv());
  out << rep.to_csv();
  return 0;
}

inline int cmd_reconstruct(const RunConfig& rc, std::ostream& out) {
  merged_config(rc, {"seed"});
  auto loaded = load_model<float>(rc.models.front());
  const auto ds = load_dataset(rc.datasets.front());
  const auto seqs = ds.normalized(rc.split, loaded.norm);
  if (rc.sequence >= static_cast<int>(seqs.size())) {
    throw UsageError("reconstruct: --sequence " + std::to_string(rc.sequence) + " but the split has " +
                     std::to_string(seqs.size()) + " sequences");
  }
  const auto& m = *loaded.model;
  const int n = m.n_in(), f = m.frame_size();
  if (static_cast<int>(seqs[rc.sequence].meta.frame_size) != f) throw DataError("reconstruct: frame size does not match the model");
  std::vector<float> seed(static_cast<std::size_t>(n) * f * f);
  copy_clip(seqs[rc.sequence], 0, n, FlipMode::none, seed.data());
  const auto r = feature_reconstruction(*loaded.model, Tensor<float>::from({1, n, f, f}, std::move(seed)), rc.step);
  write_reconstruction_pgms(r, loaded.norm, rc.out);
  std::string csv = "rank,feature,weight_magnitude\n";
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    csv += std::to_string(i + 1) + "," + std::to_string(r.order[i]) + "," + format_number(r.weight_magnitude[r.order[i]]) + "\n";
  }
  write_text(rc.out / "ranking.csv", csv);
  out << "reconstruct: " << r.order.size() << " feature maps at step " << r.step << " written to " << rc.out.string() << "\n";
  return 0;
}

inline int cmd_probe(const RunConfig& rc, std::ostream& out) {
  const auto k = merged_config(rc, probe_keys());
  ProbeConfig pc;
  pc.epochs = static_cast<int>(k.get_int("epochs", pc.epochs));
  pc.batch = static_cast<int>(k.get_int("batch", pc.batch));
  pc.lr = k.get_double("lr", pc.lr);
  pc.windows_per_sequence = static_cast<int>(k.get_int("windows_per_sequence", pc.windows_per_sequence));
  pc.width = static_cast<int>(k.get_int("width", pc.width));
  pc.seed = static_cast<std::uint64_t>(k.get_int("seed", static_cast<long long>(pc.seed)));

  fs::path ckpt = rc.models.front();
  std::string params = "params.svwp";
  if (fs::is_regular_file(ckpt)) {
    params = ckpt.filename().string();
    ckpt = ckpt.parent_path();
  }
  auto loaded = load_model<float>(ckpt, params);
  const auto source = parse_encoder_source(rc.encoder);
  auto encoder = source == EncoderSource::pretrained ? as_unet(std::move(loaded.model))
                                                     : random_encoder<float>(loaded.model->config(), pc.seed);
  const auto ds = load_dataset(rc.datasets.front());
  ProbeHistory hist;
  auto probe = train_probe(std::move(encoder), ds, loaded.norm, pc, &hist, &out);

  ProbeReport rep;
  auto add = [&](const std::string& name, const std::vector<SequenceRecord>& seqs) {
    rep.rows.push_back({rc.encoder, name, eval_probe(probe, seqs)});
    rep.rows.push_back({"dummy", name, DummyRegressor::fit(seqs).mae(seqs)});
  };
  add("test", ds.normalized("test", loaded.norm));
  for (const auto& dir : rc.eval_sets) {
    const auto extra = load_dataset(dir);
    add(extra.name, extra.normalized("all", loaded.norm));
  }
  fs::create_directories(rc.out);
  ad::save_checkpoint(probe.head(), rc.out / "probe_head.svwp");
  std::string h = "epoch,train_mse,val_mae_m\n";
  for (std::size_t e = 0; e < hist.val_mae.size(); ++e) {
    h += std::to_string(e + 1) + "," + format_number(hist.train_mse[e]) + "," + format_number(hist.val_mae[e]) + "\n";
  }
  write_text(rc.out / "probe_history.csv", h);
  write_text(rc.out / "probe.csv", rep.to_csv());
  out << rep.to_csv();
  return 0;
}

inline int run(const RunConfig& rc, std::ostream& out) {
  if (rc.command == "simulate") return cmd_simulate(rc, out);
  if (rc.command == "gen-dataset") return cmd_gen_dataset(rc, out);
  if (rc.command == "train") return cmd_train(rc, out);
  if (rc.command == "evaluate") return cmd_evaluate(rc, out);
  if (rc.command == "generalize") return cmd_generalize(rc, out);
  if (rc.command == "bench") return cmd_bench(rc, out);
  if (rc.command == "reconstruct") return cmd_reconstruct(rc, out);
  if (rc.command == "probe") return cmd_probe(rc, out);
  throw UsageError("unknown subcommand '" + rc.command + "'");
}

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numeric: return 4;
  }
  return 1;
}

inline void report_error(std::ostream& err, const char* category, std::string message) {
  for (char& ch : message)
    if (ch == '\n' || ch == '\r') ch = ' ';
  err << "error: category=" << category << " message=" << message << "\n";
}

/// Parses, runs and maps failures to exit codes.
inline int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run(parse_args(args), out);
  } catch (const HelpRequested& h) {
    out << h.text;
    return 0;
  } catch (const Error& e) {
    report_error(err, category_name(e.category()), e.what());
    return exit_code(e.category());
  } catch (const ShapeError& e) {
    report_error(err, "usage", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "data", e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
}

}  // namespace svw::cli
