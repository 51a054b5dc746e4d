#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gedi/pipeline.hpp"

namespace {

void add_data_options(CLI::App& cmd, gedi::RunConfig& rc) {
  cmd.add_option("--data", rc.data_path, "Input CSV (header row, empty cell = missing)");
  cmd.add_option("--schema", rc.schema_path, "Schema JSON");
  cmd.add_option("--synthetic", rc.synthetic_rows,
                 "Use the planted synthetic fixture with N rows instead of --data/--schema")
      ->check(CLI::PositiveNumber);
  cmd.add_option("--missing-rate", rc.missing_rate, "Rate of the artificial test mask")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd.add_option("--seed", rc.seed, "Root seed")->capture_default_str();
}

void add_train_options(CLI::App& cmd, gedi::RunConfig& rc) {
  cmd.add_option("--variant", rc.variant, "gedi, gedi-f or gedi-g")->capture_default_str();
  cmd.add_option("--epochs", rc.epochs, "Training epochs");
  cmd.add_option("--batch-size", rc.batch_size, "Rows per batch (also the graph size)");
  cmd.add_option("--epsilon", rc.epsilon, "Similarity threshold in [0, 1)");
  cmd.add_option("--lr", rc.lr, "Model learning rate");
  cmd.add_option("--patience", rc.patience, "Early-stopping patience in epochs");
}

void add_output_options(CLI::App& cmd, gedi::RunConfig& rc) {
  cmd.add_option("--out", rc.out_path, "Completed CSV");
  cmd.add_option("--report", rc.report_path, "Report JSON (standard output when omitted)");
  cmd.add_option("--checkpoint", rc.checkpoint_path, "Parameter checkpoint");
  cmd.add_flag("--timing", rc.timing, "Add wall-clock seconds to the report");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-enhanced imputation and label prediction for tabular data"};
  app.require_subcommand(1);
  gedi::RunConfig rc;

  CLI::App* impute = app.add_subcommand("impute", "Train in impute mode and complete the table");
  add_data_options(*impute, rc);
  add_train_options(*impute, rc);
  add_output_options(*impute, rc);

  CLI::App* predict = app.add_subcommand("predict", "Train a label-prediction mode");
  add_data_options(*predict, rc);
  add_train_options(*predict, rc);
  add_output_options(*predict, rc);
  predict->add_option("--mode", rc.mode, "two-step, direct, multi-task or meta (default meta)");
  predict->add_option("--meta-lr", rc.meta_lr, "Weight-net learning rate");
  predict->add_flag("--pin-weights", rc.pin_weights, "Hold every task weight at 1");

  CLI::App* ablate = app.add_subcommand("ablate", "Run variant x mode cells over seeds");
  add_data_options(*ablate, rc);
  add_train_options(*ablate, rc);
  ablate->add_option("--variants", rc.variants, "Variants (default: all three)");
  ablate->add_option("--modes", rc.modes, "impute and/or label modes (default: impute)");
  ablate->add_option("--seeds", rc.seeds, "Consecutive seeds per cell")->capture_default_str();
  ablate->add_option("--meta-lr", rc.meta_lr, "Weight-net learning rate");
  ablate->add_option("--report", rc.report_path, "Report JSON (standard output when omitted)");
  ablate->add_flag("--timing", rc.timing, "Add wall-clock seconds to the report");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_flag("--faulty-relu", rc.faulty_relu,
                      "Break the ReLU backward pass (the suite must then fail)");
  gradcheck->add_option("--report", rc.report_path, "Report JSON (standard output when omitted)");
  gradcheck->add_flag("--timing", rc.timing, "Add wall-clock seconds to the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return gedi::kExitConfig;
  }
  rc.command = app.get_subcommands().front()->get_name();
  return gedi::run_command(rc, std::cout, std::cerr);
}
