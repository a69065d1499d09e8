// Command-line front end for the power-control imitation pipeline.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "gdmpc/config.hpp"
#include "gdmpc/io.hpp"
#include "gdmpc/pipeline.hpp"
#include "gdmpc/rng.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIntegrity = 4;

struct GlobalArgs {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 2;
};

gdmpc::ExperimentConfig load_config(const GlobalArgs& args) {
  auto config = gdmpc::load_experiment_config(args.config_path);
  if (args.seed_set) config.master_seed = args.seed;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-conditioned diffusion policies for wireless power control"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "experiment configuration JSON")->required();
  app.add_option("--out", args.out, "output file or directory")->required();
  auto* seed_opt = app.add_option("--seed", args.seed, "master seed override");
  app.add_option("--jobs", args.jobs, "worker threads for per-network fan-out");

  std::string data_path, buffers_path, ckpt_path, network_id = "net-000", nodes = "0,1";
  std::size_t slice_samples = 500;

  auto* netgen = app.add_subcommand("netgen", "generate the network dataset");
  auto* expert = app.add_subcommand("expert", "run dual-descent experts over a dataset");
  expert->add_option("--data", data_path, "dataset file")->required();
  auto* train = app.add_subcommand("train", "train the diffusion policy");
  train->add_option("--data", data_path, "dataset file")->required();
  train->add_option("--buffers", buffers_path, "expert buffers file")->required();
  auto* eval = app.add_subcommand("eval", "evaluate policies on the test split");
  eval->add_option("--data", data_path, "dataset file")->required();
  eval->add_option("--buffers", buffers_path, "expert buffers file")->required();
  eval->add_option("--ckpt", ckpt_path, "trained checkpoint")->required();
  auto* pipeline = app.add_subcommand("pipeline", "run all stages with artifact reuse");
  auto* slice = app.add_subcommand("slice", "dump 2D expert/GDM scatter data");
  slice->add_option("--data", data_path, "dataset file")->required();
  slice->add_option("--buffers", buffers_path, "expert buffers file")->required();
  slice->add_option("--ckpt", ckpt_path, "trained checkpoint")->required();
  slice->add_option("--network", network_id, "network id (default net-000)");
  slice->add_option("--nodes", nodes, "pair of node indices, e.g. 3,4");
  slice->add_option("--samples", slice_samples, "generated sample count");

  CLI11_PARSE(app, argc, argv);
  args.seed_set = seed_opt->count() > 0;

  try {
    const auto config = load_config(args);

    if (netgen->parsed()) {
      gdmpc::io::save_dataset(gdmpc::make_dataset(config, config.master_seed), args.out);
      std::printf("wrote %s (%zu networks)\n", args.out.c_str(), config.split.total());
    } else if (expert->parsed()) {
      const auto dataset = gdmpc::io::load_dataset(data_path);
      const auto buffers = gdmpc::make_buffers(config, dataset, config.master_seed, args.jobs);
      gdmpc::io::save_buffers(buffers, args.out);
      std::printf("wrote %s (f_min = %.6g)\n", args.out.c_str(), buffers.f_min);
    } else if (train->parsed()) {
      const auto dataset = gdmpc::io::load_dataset(data_path);
      const auto buffers = gdmpc::io::load_buffers(buffers_path);
      auto result = gdmpc::run_training(config, dataset, buffers, config.master_seed, args.jobs);
      if (result.diverged) throw gdmpc::NumericalError("training diverged");
      gdmpc::io::save_checkpoint(result.best, args.out + "/best.json");
      gdmpc::io::write_file(args.out + "/trace.csv", gdmpc::io::trace_to_csv(result.trace));
      std::printf("best checkpoint at epoch %zu (val p5 = %.4f)\n", result.best.epoch,
                  result.best.val_p5);
    } else if (eval->parsed()) {
      const auto dataset = gdmpc::io::load_dataset(data_path);
      const auto buffers = gdmpc::io::load_buffers(buffers_path);
      const auto checkpoint = gdmpc::io::load_checkpoint(ckpt_path);
      const auto artifacts =
          gdmpc::run_eval(config, dataset, buffers, checkpoint, config.master_seed, args.jobs);
      gdmpc::io::write_file(args.out + "/summary.json", artifacts.summary.dump(2) + "\n");
      gdmpc::io::write_file(args.out + "/compare.csv", artifacts.table.to_csv());
      for (const auto& [rel, csv] : artifacts.rollout_csvs)
        gdmpc::io::write_file(args.out + "/" + rel, csv);
      std::printf("%s", artifacts.table.to_csv().c_str());
    } else if (pipeline->parsed()) {
      const auto statuses = gdmpc::run_pipeline(config, args.out, args.jobs);
      for (const auto& s : statuses)
        std::printf("%-8s %s\n", s.name.c_str(), s.skipped ? "skipped (up to date)" : "done");
    } else if (slice->parsed()) {
      const auto comma = nodes.find(',');
      if (comma == std::string::npos) throw gdmpc::ConfigError("--nodes expects i,j");
      const std::size_t a = std::stoul(nodes.substr(0, comma));
      const std::size_t b = std::stoul(nodes.substr(comma + 1));
      const auto dataset = gdmpc::io::load_dataset(data_path);
      const auto buffers = gdmpc::io::load_buffers(buffers_path);
      const auto checkpoint = gdmpc::io::load_checkpoint(ckpt_path);
      gdmpc::io::write_file(args.out, gdmpc::slice_csv(config, dataset, buffers, checkpoint,
                                                       network_id, a, b, slice_samples,
                                                       config.master_seed));
      std::printf("wrote %s\n", args.out.c_str());
    }
  } catch (const gdmpc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const gdmpc::IntegrityError& e) {
    std::fprintf(stderr, "integrity error: %s\n", e.what());
    return kExitIntegrity;
  } catch (const gdmpc::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
  return 0;
}
