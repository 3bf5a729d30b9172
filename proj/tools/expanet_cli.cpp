#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "expanet/pipeline.hpp"

namespace {

int exit_code_for(const expanet::Error& e) {
  switch (e.category()) {
    case expanet::ErrorCategory::config:
      return 2;
    case expanet::ErrorCategory::data:
      return 3;
    case expanet::ErrorCategory::numeric:
    case expanet::ErrorCategory::logic:
      return 4;
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG functional-connectivity MDD classifier pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  unsigned long long seed = 0;
  bool seed_set = false;
  std::string out_dir;

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "generate the synthetic two-class EEG cohort"},
      {"preprocess", "filter, re-reference, and segment recordings into epochs"},
      {"featurize", "compute per-channel feature vectors for every epoch"},
      {"graph", "build sparsified phase-locking graphs"},
      {"train", "run subject-wise cross-validated training"},
      {"explain", "optimize explanation masks and aggregate saliency"},
      {"report", "write the summary report from stage artifacts"}};
  for (const auto& [name, blurb] : stages) {
    CLI::App* sub = app.add_subcommand(name, blurb);
    sub->add_option("--config", config_path, "pipeline config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override config seed")
        ->each([&seed_set](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "override output directory");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    expanet::PipelineConfig cfg = expanet::load_config(config_path);
    if (seed_set) {
      cfg.seed = seed;
      cfg.effective["seed"] = cfg.seed;
    }
    if (!out_dir.empty()) {
      // --out redirects the stage's own outputs; for report that is the report
      // directory, for everything else the working directory.
      if (cmd == "synth") {
        cfg.data_dir = out_dir;
        cfg.effective["paths"]["data_dir"] = out_dir;
      } else if (cmd != "report") {
        cfg.work_dir = out_dir;
        cfg.effective["paths"]["work_dir"] = out_dir;
      }
    }

    if (cmd == "synth") {
      const auto files = expanet::cmd_synth(cfg);
      std::printf("synth: wrote %zu recordings to %s\n", files.size(),
                  cfg.data_dir.string().c_str());
    } else if (cmd == "preprocess") {
      expanet::cmd_preprocess(cfg);
      std::printf("preprocess: epochs written to %s\n", cfg.work_dir.string().c_str());
    } else if (cmd == "featurize") {
      expanet::cmd_featurize(cfg);
      std::printf("featurize: feature tensors written to %s\n",
                  cfg.work_dir.string().c_str());
    } else if (cmd == "graph") {
      expanet::cmd_graph(cfg);
      std::printf("graph: connectivity graphs written to %s\n",
                  cfg.work_dir.string().c_str());
    } else if (cmd == "train") {
      expanet::cmd_train(cfg);
      std::printf("train: fold models and metrics written to %s\n",
                  cfg.work_dir.string().c_str());
    } else if (cmd == "explain") {
      expanet::cmd_explain(cfg);
      std::printf("explain: masks and saliency written to %s\n",
                  cfg.work_dir.string().c_str());
    } else if (cmd == "report") {
      const std::filesystem::path dir =
          out_dir.empty() ? cfg.work_dir / "report" : std::filesystem::path(out_dir);
      expanet::cmd_report(cfg, dir);
      std::printf("report: written to %s\n", dir.string().c_str());
    }
  } catch (const expanet::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
