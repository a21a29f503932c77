#include <CLI11.hpp>
#include <iostream>

#include "vlamd/cli.hpp"

// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric failure.
int main(int argc, char** argv) {
  CLI::App app{"vlamd: bidirectional mutual scene-text recognizer"};
  app.require_subcommand(1);

  std::string config_path, resume, ckpt, manifest, report_path, image_path;
  int nbest = 0;
  bool dump_candidates = false;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic word-image dataset");
  gen->add_option("--config", config_path, "config file")->required();

  auto* train = app.add_subcommand("train", "train the four-head model");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--resume", resume, "checkpoint to load weights from");

  auto* eval = app.add_subcommand("eval", "evaluate word accuracy over a manifest");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--data", manifest, "evaluation manifest")->required();
  eval->add_option("--report", report_path, "write a per-sample TSV report");

  auto* decode = app.add_subcommand("decode", "recognize a single image");
  decode->add_option("--ckpt", ckpt, "checkpoint file")->required();
  decode->add_option("--image", image_path, "PNG image")->required();
  decode->add_option("--nbest", nbest, "hypotheses per direction");
  decode->add_flag("--dump-candidates", dump_candidates, "print every rescored candidate");

  auto* selfcheck = app.add_subcommand("selfcheck", "run numeric self-diagnostics");
  (void)selfcheck;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      vlamd::cli::run_gen_data(config_path, std::cout);
    } else if (train->parsed()) {
      vlamd::cli::run_train(config_path, resume, std::cout);
    } else if (eval->parsed()) {
      vlamd::cli::run_eval(ckpt, manifest, report_path, std::cout);
    } else if (decode->parsed()) {
      vlamd::cli::run_decode(ckpt, image_path, nbest, dump_candidates, std::cout);
    } else if (selfcheck->parsed()) {
      if (!vlamd::run_selfcheck(std::cout)) return 3;
    }
  } catch (const vlamd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const vlamd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const vlamd::ShapeError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const vlamd::AxisError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const vlamd::RankError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const vlamd::LengthError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
