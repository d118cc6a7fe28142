#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "drag/config.hpp"
#include "drag/pipeline_check.hpp"
#include "drag/training.hpp"

namespace drag::cli {

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::int64_t seed = -1;
  std::int64_t regions = -1;
  std::string mode;
};

void add_config_flags(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--seed", opts.seed, "run seed (overrides the config file)");
}

RunConfig make_config(const CommonOpts& opts) {
  RunConfig config =
      opts.config_path.empty() ? RunConfig{} : RunConfig::from_file(opts.config_path);
  if (opts.seed >= 0) config.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.regions > 0) config.n_regions = static_cast<std::size_t>(opts.regions);
  if (!opts.mode.empty()) {
    ablation_mode_from_string(opts.mode);
    config.mode = opts.mode;
  }
  return config;
}

void print_metrics_header(const std::string& label_col) {
  std::printf("%-20s %9s | %9s %8s %8s | %9s %8s %8s\n", label_col.c_str(), "accuracy",
              "precision", "recall", "f1", "precision", "recall", "f1");
  std::printf("%-20s %9s | %28s | %28s\n", "", "", "private", "public");
}

void print_metrics_row(const std::string& label, const MetricsReport& m) {
  std::printf("%-20s %8.2f%% | %9.3f %8.3f %8.3f | %9.3f %8.3f %8.3f\n", label.c_str(),
              m.accuracy * 100.0, m.private_cls.precision, m.private_cls.recall,
              m.private_cls.f1, m.public_cls.precision, m.public_cls.recall, m.public_cls.f1);
}

std::vector<std::pair<std::string, std::string>> checkpoint_metadata(const RunConfig& config,
                                                                     const DragModel& model,
                                                                     const TrainResult& result) {
  std::vector<std::pair<std::string, std::string>> meta;
  meta.emplace_back("N", std::to_string(model.config.n_regions));
  meta.emplace_back("C", std::to_string(model.config.channels()));
  meta.emplace_back("H", std::to_string(model.config.side()));
  meta.emplace_back("W", std::to_string(model.config.side()));
  meta.emplace_back("d_k", std::to_string(model.config.key_dim));
  meta.emplace_back("seed", std::to_string(config.seed));
  meta.emplace_back("stage_reached", result.last_stage.empty() ? "none" : result.last_stage);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", result.best_val_accuracy);
  meta.emplace_back("best_val_accuracy", buf);
  for (const auto& [k, v] : config.to_pairs()) meta.emplace_back("config." + k, v);
  return meta;
}

RunConfig config_from_checkpoint(const Checkpoint& ck) {
  RunConfig config;
  for (const auto& [k, v] : ck.metadata) {
    if (k.rfind("config.", 0) == 0) config.set(k.substr(7), v);
  }
  return config;
}

struct TrainedRun {
  DragModel model;
  TrainResult result;
  MetricsReport test;
};

TrainedRun train_once(const RunConfig& config, const Dataset& data, AblationMode mode) {
  TrainedRun run{DragModel::init(config.model_config(), config.seed), {}, {}};
  TrainOptions options = config.train_options();
  options.mode = mode;
  run.result = run_schedule(run.model, data, default_schedule(options), options);
  run.test = evaluate(run.model, data, Split::test, mode, options.batch_size);
  return run;
}

void save_run(const RunConfig& config, const TrainedRun& run, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Checkpoint ck = run.model.state();
  ck.metadata = checkpoint_metadata(config, run.model, run.result);
  save_checkpoint(ck, out_dir / "checkpoint.bin");
  write_epoch_log(out_dir / "train_log.csv", run.result.log);
}

int cmd_gen_data(const CommonOpts& opts) {
  const RunConfig config = make_config(opts);
  const Dataset data = generate_dataset(config.dataset_config(), opts.out);
  std::size_t n_private = 0;
  for (int label : data.labels) n_private += static_cast<std::size_t>(label);
  std::printf("generated %zu samples (%zu private, %zu public) in %s\n", data.size(), n_private,
              data.size() - n_private, opts.out.c_str());
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  const RunConfig config = make_config(opts);
  const Dataset data = load_dataset(opts.data);
  const AblationMode mode = ablation_mode_from_string(config.mode);
  const auto start = std::chrono::steady_clock::now();
  TrainedRun run = train_once(config, data, mode);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_run(config, run, opts.out);
  std::printf("trained mode=%s in %.1f s, best val accuracy %.4f\n", config.mode.c_str(), seconds,
              run.result.best_val_accuracy);
  print_metrics_header("model");
  print_metrics_row("drag (" + config.mode + ")", run.test);
  std::printf("checkpoint: %s\n", (fs::path(opts.out) / "checkpoint.bin").string().c_str());
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  const Checkpoint ck = load_checkpoint(opts.checkpoint);
  RunConfig config = config_from_checkpoint(ck);
  if (!opts.mode.empty()) {
    ablation_mode_from_string(opts.mode);
    config.mode = opts.mode;
  }
  DragModel model = DragModel::init(config.model_config(), config.seed);
  model.load_state(ck);
  const Dataset data = load_dataset(opts.data);
  const MetricsReport report = evaluate(model, data, Split::test,
                                        ablation_mode_from_string(config.mode),
                                        config.batch_size);
  print_metrics_header("model");
  print_metrics_row("drag (" + config.mode + ")", report);
  return 0;
}

int cmd_grad_check(const CommonOpts& opts) {
  const ModelConfig model_config =
      opts.config_path.empty() ? grad_check_model_config() : make_config(opts).model_config();
  const std::uint64_t seed = opts.seed >= 0 ? static_cast<std::uint64_t>(opts.seed) : 7;
  const auto report = check_pipeline_gradients(model_config, 2, seed);
  std::printf("max relative error = %.3e (analytic %.6e vs numeric %.6e, param %zu entry %zu)\n",
              report.max_rel_error, report.analytic, report.numeric, report.worst_param,
              report.worst_entry);
  return report.max_rel_error < 1e-4 ? 0 : 1;
}

int cmd_cluster(const CommonOpts& opts) {
  const RunConfig config = make_config(opts);
  DragModel model = DragModel::init(config.model_config(), config.seed);
  if (!opts.checkpoint.empty()) model.load_state(load_checkpoint(opts.checkpoint));
  const Dataset data = load_dataset(opts.data);
  const auto train_indices = data.indices_of(Split::train);

  SignatureBuilder builder;
  {
    NoGradGuard guard;
    for (std::size_t start = 0; start < train_indices.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, train_indices.size() - start);
      std::vector<std::size_t> chunk(train_indices.begin() + start,
                                     train_indices.begin() + start + count);
      builder.add(
          backbone_forward(data.gather_images(chunk), model.backbone, model.config.backbone));
    }
  }
  const ChannelSignatures signatures = builder.finish();
  const ClusterAssignment assignment =
      cluster_channels(signatures, config.n_regions, config.seed);
  fs::create_directories(opts.out);
  write_signatures(fs::path(opts.out) / "signatures.txt", signatures);
  write_assignment(fs::path(opts.out) / "assignment.txt", assignment);
  std::printf("clustered %zu channels into %zu regions over %zu images; wrote %s\n",
              signatures.channels, config.n_regions, signatures.count, opts.out.c_str());
  return 0;
}

int cmd_export_regions(const CommonOpts& opts, std::int64_t count, const std::string& split_name) {
  const Checkpoint ck = load_checkpoint(opts.checkpoint);
  RunConfig config = config_from_checkpoint(ck);
  DragModel model = DragModel::init(config.model_config(), config.seed);
  model.load_state(ck);
  const Dataset data = load_dataset(opts.data);
  const auto indices = data.indices_of(split_from_string(split_name));
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count), indices.size());
  if (n == 0) throw ContractError("export-regions: no images in split " + split_name);

  NoGradGuard guard;
  std::vector<std::size_t> chunk(indices.begin(), indices.begin() + n);
  const auto out = model.forward(data.gather_images(chunk));
  const std::size_t nr = model.config.n_regions;
  const std::size_t side = model.config.side();
  for (std::size_t i = 0; i < n; ++i) {
    const auto* base = out.fw.values().data() + i * nr * side * side;
    export_region_maps(opts.out,
                       Tensor::from({nr, side, side},
                                    std::vector<double>(base, base + nr * side * side)),
                       chunk[i]);
    const auto* corr = out.corr.values().data() + i * nr * nr;
    char name[48];
    std::snprintf(name, sizeof(name), "corr_%zu.txt", chunk[i]);
    write_correlation(fs::path(opts.out) / name,
                      Tensor::from({nr, nr}, std::vector<double>(corr, corr + nr * nr)));
  }
  std::printf("exported %zu region maps per image for %zu images to %s\n", nr, n,
              opts.out.c_str());
  return 0;
}

int cmd_ablate(const CommonOpts& opts) {
  const RunConfig config = make_config(opts);
  const Dataset data = load_dataset(opts.data);
  fs::create_directories(opts.out);
  std::ofstream csv(fs::path(opts.out) / "ablation.csv");
  csv << "mode,accuracy,private_f1,public_f1\n";
  print_metrics_header("mode");
  for (const AblationMode mode : all_ablation_modes()) {
    TrainedRun run = train_once(config, data, mode);
    print_metrics_row(to_string(mode), run.test);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", to_string(mode).c_str(),
                  run.test.accuracy, run.test.private_cls.f1, run.test.public_cls.f1);
    csv << buf;
  }
  std::printf("wrote %s\n", (fs::path(opts.out) / "ablation.csv").string().c_str());
  return 0;
}

int cmd_sweep_n(const CommonOpts& opts) {
  RunConfig config = make_config(opts);
  const Dataset data = load_dataset(opts.data);  // one dataset shared across all N
  fs::create_directories(opts.out);
  std::ofstream csv(fs::path(opts.out) / "sweep_n.csv");
  csv << "n_regions,accuracy,private_f1,public_f1\n";
  print_metrics_header("N");
  for (const std::size_t n : {4u, 6u, 8u, 10u, 12u}) {
    config.n_regions = n;
    TrainedRun run = train_once(config, data, ablation_mode_from_string(config.mode));
    print_metrics_row("N=" + std::to_string(n), run.test);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", n, run.test.accuracy,
                  run.test.private_cls.f1, run.test.public_cls.f1);
    csv << buf;
  }
  std::printf("wrote %s\n", (fs::path(opts.out) / "sweep_n.csv").string().c_str());
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"dynamic region-aware GCN for privacy-leaking image detection"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::int64_t export_count = 4;
  std::string split_name = "test";

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic co-occurrence benchmark");
  add_config_flags(gen, opts);
  gen->add_option("--out", opts.out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "run the staged training schedule");
  add_config_flags(train, opts);
  train->add_option("--data", opts.data, "dataset directory")->required();
  train->add_option("--out", opts.out, "output directory for checkpoint and log")->required();
  train->add_option("--regions", opts.regions, "number of regions N");
  train->add_option("--mode", opts.mode,
                    "ablation mode: full|fixed_correlation|no_gcn|frozen_cgl");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", opts.data, "dataset directory")->required();
  eval->add_option("--mode", opts.mode, "override the stored ablation mode");

  auto* gc = app.add_subcommand("grad-check",
                                "finite-difference check of the full pipeline gradients");
  add_config_flags(gc, opts);

  auto* cluster = app.add_subcommand("cluster", "dump peak signatures and the K-means grouping");
  add_config_flags(cluster, opts);
  cluster->add_option("--data", opts.data, "dataset directory")->required();
  cluster->add_option("--out", opts.out, "output directory")->required();
  cluster->add_option("--checkpoint", opts.checkpoint, "backbone source (default: fresh init)");
  cluster->add_option("--regions", opts.regions, "number of regions N");

  auto* exp = app.add_subcommand("export-regions", "write per-region graymaps and correlations");
  exp->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  exp->add_option("--data", opts.data, "dataset directory")->required();
  exp->add_option("--out", opts.out, "output directory")->required();
  exp->add_option("--count", export_count, "number of images to export");
  exp->add_option("--split", split_name, "split to draw images from");

  auto* ablate = app.add_subcommand("ablate", "train and compare all four ablation modes");
  add_config_flags(ablate, opts);
  ablate->add_option("--data", opts.data, "dataset directory")->required();
  ablate->add_option("--out", opts.out, "output directory")->required();
  ablate->add_option("--regions", opts.regions, "number of regions N");

  auto* sweep = app.add_subcommand("sweep-n", "train across N in {4,6,8,10,12} on one dataset");
  add_config_flags(sweep, opts);
  sweep->add_option("--data", opts.data, "dataset directory")->required();
  sweep->add_option("--out", opts.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (train->parsed()) return cmd_train(opts);
    if (eval->parsed()) return cmd_eval(opts);
    if (gc->parsed()) return cmd_grad_check(opts);
    if (cluster->parsed()) return cmd_cluster(opts);
    if (exp->parsed()) return cmd_export_regions(opts, export_count, split_name);
    if (ablate->parsed()) return cmd_ablate(opts);
    if (sweep->parsed()) return cmd_sweep_n(opts);
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("drag");
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace drag::cli
