// ssd: command-line front end for training, importance estimation,
// dampening, evaluation and alpha sweeps.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssd/harness.hpp"

namespace fs = std::filesystem;
using ssd::Json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> method;
  std::optional<std::string> output_space;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config value, e.g. --set train.epochs=5 (repeatable)");
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("-o,--output-dir", c.output_dir, "Directory for checkpoints, importance files and reports");
}

void add_method(CLI::App* cmd, Common& c) {
  cmd->add_option("--method", c.method, "Importance estimator")->check(CLI::IsMember({"ssd", "lfssd"}));
  cmd->add_option("--output-space", c.output_space, "Output whose norm lfssd differentiates")
      ->check(CLI::IsMember({"logits", "softmax"}));
}

std::string quoted(const std::string& s) { return Json(s).dump(); }

ssd::ExperimentConfig resolve(const Common& c, std::vector<std::string> extra) {
  Json j = c.config_path.empty() ? Json::object() : ssd::read_json_file(c.config_path);
  if (c.seed) extra.insert(extra.begin(), "seed=" + std::to_string(*c.seed));
  if (c.output_dir) extra.insert(extra.begin(), "output_dir=" + quoted(*c.output_dir));
  if (c.method) extra.insert(extra.begin(), "method=" + quoted(*c.method));
  if (c.output_space) extra.insert(extra.begin(), "output_space=" + quoted(*c.output_space));
  for (const auto& s : c.sets) ssd::apply_override(j, s);
  for (const auto& s : extra) ssd::apply_override(j, s);
  return ssd::config_from_json(j);
}

ssd::Checkpoint load_matching_checkpoint(const fs::path& path, const ssd::Workspace& ws) {
  auto ck = ssd::load_checkpoint(path);
  if (ck.spec.input_dim() != ws.spec.input_dim() || ck.spec.class_count() != ws.spec.class_count())
    throw ssd::Error(ssd::Errc::shape_mismatch, path.string() + ": model " + ssd::shape_string(ck.spec.layer_sizes) +
                                                    " does not fit the configured data");
  return ck;
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

Json scores_json(const ssd::AccuracyRow& r) {
  return {{"retain_acc", r.retain}, {"forget_acc", r.forget}, {"test_acc", r.test}};
}

Json mia_json(const ssd::MiaReport& m) {
  Json j = {{"mia", m.mia_score}, {"attack_train_acc", m.attack_train_accuracy},
            {"attack_members", m.attack_members}, {"degenerate", m.degenerate}};
  j["threshold_entropy"] = std::isfinite(m.threshold_entropy) ? Json(m.threshold_entropy) : Json(nullptr);
  return j;
}

ssd::ImportanceVector load_importance_for(const fs::path& path, const ssd::Checkpoint& ck, ssd::ImportanceScope over) {
  auto f = ssd::load_importance(path);
  if (f.checkpoint_hash != ssd::checkpoint_hash(ck.spec, ck.params))
    throw ssd::Error(ssd::Errc::source_mismatch, path.string() + " was computed for a different checkpoint");
  if (f.importance.over != over)
    throw ssd::Error(ssd::Errc::source_mismatch, path.string() + " is a " + ssd::to_string(f.importance.over) +
                                                     "-set importance");
  return f.importance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective synaptic dampening for small MLPs"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint, out, over = "full", imp_full_path, imp_forget_path, grid_text;
  std::optional<double> alpha, lambda;

  auto* train_cmd = app.add_subcommand("train", "Train the baseline model and write a checkpoint");
  add_common(train_cmd, common);
  train_cmd->add_option("--out", out, "Checkpoint path (default <output_dir>/baseline.ckpt)");

  auto* imp_cmd = app.add_subcommand("importance", "Compute an importance vector for a checkpoint");
  add_common(imp_cmd, common);
  add_method(imp_cmd, common);
  imp_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/baseline.ckpt)");
  imp_cmd->add_option("--over", over, "Sample set")->check(CLI::IsMember({"full", "forget"}));
  imp_cmd->add_option("--out", out, "Importance file path");

  auto* unlearn_cmd = app.add_subcommand("unlearn", "Dampen a checkpoint against the configured forget set");
  add_common(unlearn_cmd, common);
  add_method(unlearn_cmd, common);
  unlearn_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/baseline.ckpt)");
  unlearn_cmd->add_option("--alpha", alpha, "Selection threshold");
  unlearn_cmd->add_option("--lambda", lambda, "Dampening constant");
  unlearn_cmd->add_option("--importance-full", imp_full_path, "Precomputed full-set importance file");
  unlearn_cmd->add_option("--importance-forget", imp_forget_path, "Precomputed forget-set importance file");
  unlearn_cmd->add_option("--out", out, "Output checkpoint (default <output_dir>/unlearned.ckpt)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy on D_r, D_f and the test set");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/baseline.ckpt)");

  auto* mia_cmd = app.add_subcommand("mia", "Entropy membership attack score on D_f");
  add_common(mia_cmd, common);
  mia_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/baseline.ckpt)");

  auto* run_cmd = app.add_subcommand("run", "Full pipeline with baselines; writes report.json and report.csv");
  add_common(run_cmd, common);
  add_method(run_cmd, common);
  run_cmd->add_option("--alpha", alpha, "Selection threshold");
  run_cmd->add_option("--lambda", lambda, "Dampening constant");

  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate a grid of alpha values from one checkpoint");
  add_common(sweep_cmd, common);
  add_method(sweep_cmd, common);
  sweep_cmd->add_option("--alpha-grid", grid_text, "Comma-separated ascending alpha values");
  sweep_cmd->add_option("--lambda", lambda, "Dampening constant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::vector<std::string> extra;
    if (alpha) extra.push_back("dampening.alpha=" + Json(*alpha).dump());
    if (lambda) extra.push_back("dampening.lambda=" + Json(*lambda).dump());
    if (!grid_text.empty()) {
      Json grid = Json::array();
      std::stringstream ss(grid_text);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        try {
          grid.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw ssd::Error(ssd::Errc::config, "--alpha-grid: \"" + cell + "\" is not a number");
        }
      }
      extra.push_back("sweep.alpha_grid=" + grid.dump());
    }
    const ssd::ExperimentConfig cfg = resolve(common, extra);
    const fs::path dir = cfg.output_dir;

    if (*train_cmd) {
      const auto ws = ssd::prepare_workspace(cfg);
      const auto result = ssd::train(ws.spec, ssd::init_model(ws.spec), ws.train, ssd::all_indices(ws.train), cfg.train);
      const fs::path path = or_default(out, ssd::baseline_checkpoint_path(cfg));
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      ssd::save_checkpoint(path, ws.spec, result.params);
      Json j = {{"checkpoint", path.string()},
                {"hash", ssd::detail::hex64(ssd::checkpoint_hash(ws.spec, result.params))},
                {"epoch_losses", result.epoch_losses}};
      std::cout << j.dump(2) << '\n';
    } else if (*imp_cmd) {
      const auto ws = ssd::prepare_workspace(cfg);
      const auto ck = load_matching_checkpoint(or_default(checkpoint, ssd::baseline_checkpoint_path(cfg)), ws);
      const auto scope = over == "full" ? ssd::ImportanceScope::full_set : ssd::ImportanceScope::forget_set;
      const auto rows = scope == ssd::ImportanceScope::full_set ? ssd::all_indices(ws.train) : ws.split.forget_indices;
      if (rows.empty()) throw ssd::Error(ssd::Errc::config, "scenario selects no samples to forget (|D_f| = 0)");
      ssd::BackwardPassCounter counter;
      const auto imp = ssd::estimate_importance(cfg.method, ck.spec, ck.params, ws.train, rows, scope,
                                                ssd::unlearn_options(ws));
      const fs::path path = or_default(out, dir / ("importance_" + over + "_" + ssd::to_string(cfg.method) + ".imp"));
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      ssd::save_importance(path, imp, ssd::checkpoint_hash(ck.spec, ck.params));
      Json j = {{"importance", path.string()}, {"source", ssd::to_string(imp.source)}, {"over", over},
                {"samples", imp.sample_count}, {"backward_passes", counter.count()}};
      std::cout << j.dump(2) << '\n';
    } else if (*unlearn_cmd) {
      const auto ws = ssd::prepare_workspace(cfg);
      ssd::preflight(ws);
      const auto ck = load_matching_checkpoint(or_default(checkpoint, ssd::baseline_checkpoint_path(cfg)), ws);
      auto opts = ssd::unlearn_options(ws);
      const auto compute = [&](ssd::ImportanceScope scope) {
        const auto rows = scope == ssd::ImportanceScope::full_set ? ssd::all_indices(ws.train) : ws.split.forget_indices;
        return ssd::estimate_importance(cfg.method, ck.spec, ck.params, ws.train, rows, scope, opts);
      };
      const auto full = imp_full_path.empty() ? compute(ssd::ImportanceScope::full_set)
                                              : load_importance_for(imp_full_path, ck, ssd::ImportanceScope::full_set);
      const auto forget = imp_forget_path.empty()
                              ? compute(ssd::ImportanceScope::forget_set)
                              : load_importance_for(imp_forget_path, ck, ssd::ImportanceScope::forget_set);
      const auto result = ssd::apply_dampening(ck.params, full, forget, cfg.dampening);
      const fs::path path = or_default(out, dir / "unlearned.ckpt");
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      ssd::save_checkpoint(path, ck.spec, result.params);
      Json blocks = Json::array();
      for (const auto& b : result.report.per_block)
        blocks.push_back({{"layer", b.layer}, {"kind", ssd::to_string(b.kind)}, {"selected", b.selected}, {"total", b.total}});
      Json j = {{"checkpoint", path.string()}, {"alpha", cfg.dampening.alpha}, {"lambda", cfg.dampening.lambda},
                {"selected", result.report.selected_indices.size()}, {"total", ck.params.size()},
                {"per_block", blocks}};
      std::cout << j.dump(2) << '\n';
    } else if (*eval_cmd || *mia_cmd) {
      const auto ws = ssd::prepare_workspace(cfg);
      ssd::preflight(ws);
      const auto ck = load_matching_checkpoint(or_default(checkpoint, ssd::baseline_checkpoint_path(cfg)), ws);
      ssd::Workspace scored = ws;
      scored.spec = ck.spec;
      const auto row = ssd::evaluate_model(scored, ck.params);
      std::cout << (*eval_cmd ? scores_json(row) : mia_json(row.mia)).dump(2) << '\n';
    } else if (*run_cmd) {
      const auto rep = ssd::run_experiment(cfg);
      std::cout << ssd::scores_csv(rep.models);
      std::cout << "report: " << (dir / "report.json").string() << '\n';
    } else if (*sweep_cmd) {
      const auto rep = ssd::sweep_alpha(cfg, cfg.sweep.alpha_grid);
      const auto csv = ssd::sweep_csv(rep);
      ssd::write_text(dir / "sweep.csv", csv);
      ssd::write_text(dir / "sweep_summary.json", ssd::sweep_summary_json(rep).dump(2) + "\n");
      std::cout << csv;
      std::cout << ssd::sweep_summary_json(rep).dump(2) << '\n';
    }
    return 0;
  } catch (const ssd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ssd::Errc::config ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
