#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "oreo/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-robust face embedding lab"};
  app.require_subcommand(1, 1);

  oreo::CommandOptions options;
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;

  const char* names[] = {"synth", "train", "embed", "eval", "analyze", "ablate", "render-attention"};
  const char* help[] = {
      "generate a synthetic dataset and export it as a manifest",
      "train a model; the output directory becomes the run directory",
      "write one template per image of the configured data",
      "closed-set, verification and open-set metrics for an embedding file",
      "per-attribute with/without CMC and ADP",
      "train and evaluate the five-row toggle grid",
      "write A2/A3 attention maps as PGM",
  };
  for (int i = 0; i < 7; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], help[i]);
    sub->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "override the command's seed");
    sub->add_flag("--deterministic", options.deterministic, "single-threaded, bit-reproducible execution");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  options.config = config;
  options.out = out;
  if (chosen->count("--seed") > 0) options.seed = seed;
  return oreo::run_command(chosen->get_name(), options, std::cout, std::cerr);
}
