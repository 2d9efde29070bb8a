#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ulm/kernels.hpp"
#include "ulm/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ultrasound localization microscopy pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::int64_t seed = -1;
  bool no_cache = false;

  const std::vector<std::string> commands{"phantom", "beamform", "moco", "localize", "track", "render", "quantify", "pipeline"};
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(name, name == "pipeline" ? "run every stage, cached by content hash" : "run the " + name + " stage");
    sub->add_option("--config", config_path, "JSON configuration")->required();
    sub->add_option("--seed", seed, "override the config seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", out_dir, "output directory");
    sub->add_flag("--no-cache", no_cache, "always recompute");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ulm::configure_threads_from_env();
    ulm::PipelineConfig cfg = ulm::load_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    const std::string cmd = app.get_subcommands().front()->get_name();
    std::filesystem::create_directories(out_dir);
    std::vector<ulm::StageReport> reports;
    if (cmd == "pipeline") {
      for (ulm::Stage s : ulm::all_stages()) reports.push_back(ulm::run_stage(s, cfg, out_dir, !no_cache));
    } else {
      reports.push_back(ulm::run_stage(ulm::stage_from(cmd), cfg, out_dir, !no_cache));
    }
    for (const auto& r : reports)
      std::cout << ulm::stage_name(r.stage) << (r.cached ? " cached " : " done ") << r.key.substr(0, 12) << '\n';
    return 0;
  } catch (const ulm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ulm::exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
