#include "translk/cli.hpp"

#include <CLI11.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "translk/io.hpp"
#include "translk/train.hpp"

namespace translk::cli {

namespace fs = std::filesystem;

std::array<Index, 3> parse_shape(const std::string& text) {
  std::array<Index, 3> dims{};
  std::istringstream is(text);
  for (std::size_t i = 0; i < 3; ++i) {
    if (i > 0 && is.get() != 'x') throw std::invalid_argument("expected DxHxW, got '" + text + "'");
    if (!(is >> dims[i]) || dims[i] < 1) {
      throw std::invalid_argument("expected DxHxW, got '" + text + "'");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::invalid_argument("expected DxHxW, got '" + text + "'");
  }
  return dims;
}

std::vector<std::pair<std::string, Config>> ablation_variants(AblationKind kind,
                                                               const Config& base) {
  std::vector<std::pair<std::string, Config>> v;
  switch (kind) {
    case AblationKind::heads:
      for (Index n : {2, 3, 4}) {
        Config c = base;
        c.model.heads = n;
        v.emplace_back("heads=" + std::to_string(n), c);
      }
      break;
    case AblationKind::mlp:
      for (MlpVariant m : {MlpVariant::ffn, MlpVariant::mlp, MlpVariant::ag_mlp}) {
        Config c = base;
        c.model.mlp_variant = m;
        v.emplace_back(to_string(m), c);
      }
      break;
    case AblationKind::decoder:
      for (DecoderVariant d : {DecoderVariant::ced, DecoderVariant::plain_concat}) {
        Config c = base;
        c.model.decoder_variant = d;
        v.emplace_back(to_string(d), c);
      }
      break;
  }
  return v;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,params,flops,dsc\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.params << ',' << r.flops << ',';
    if (r.dsc >= 0) os << std::fixed << std::setprecision(4) << r.dsc << std::defaultfloat;
    os << '\n';
  }
}

namespace {

Config config_or_default(const std::string& path) {
  return path.empty() ? Config{} : load_config(path);
}

const CLI::Validator kShapeValidator(
    [](std::string& s) -> std::string {
      try {
        for (Index d : parse_shape(s)) {
          if (d % kSpatialMultiple) return "dimensions must be multiples of 32: " + s;
        }
      } catch (const std::invalid_argument& e) {
        return e.what();
      }
      return {};
    },
    "DxHxW");

void print_progress(std::ostream& out, int step, double loss) {
  if (step % 10 == 0) out << "step " << step << " loss " << loss << std::endl;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D segmentation network: cost accounting, gradient checks, toy training"};
  app.name("translk");
  app.require_subcommand(1);

  std::string config_path;
  std::string shape = "96x96x96";

  auto* describe = app.add_subcommand("describe", "Print the per-module parameter report");
  describe->add_option("config", config_path, "Config file (defaults when omitted)")
      ->check(CLI::ExistingFile);

  auto* flops = app.add_subcommand("flops", "Print parameters and forward FLOPs");
  flops->add_option("config", config_path, "Config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  flops->add_option("--shape", shape, "Input spatial shape")->check(kShapeValidator);

  std::string filter;
  std::uint64_t seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--filter", filter, "Run checks whose name contains this");
  gradcheck->add_option("--seed", seed, "Jitter and sampling seed");

  std::string out_dir;
  std::optional<int> steps;
  auto* train = app.add_subcommand("train", "Train on the synthetic blob task");
  train->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--steps", steps, "Override train.steps")->check(CLI::PositiveNumber);

  std::string ckpt, in_path, out_path;
  auto* infer = app.add_subcommand("infer", "Label a TLK1 volume with a trained checkpoint");
  infer->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--in", in_path, "Input TLK1 volume")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out_path, "Output TLK1 label volume")->required();

  AblationKind kind = AblationKind::heads;
  const std::map<std::string, AblationKind> kinds{
      {"heads", AblationKind::heads}, {"mlp", AblationKind::mlp}, {"decoder", AblationKind::decoder}};
  std::string mode;
  std::string csv_path;
  auto* ablate = app.add_subcommand("ablate", "Sweep one design choice and emit a CSV");
  ablate->add_option("kind", kind, "heads, mlp or decoder")
      ->required()
      ->transform(CLI::CheckedTransformer(kinds, CLI::ignore_case));
  ablate->add_option("config", config_path, "Config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  ablate->add_option("--shape", shape, "Input spatial shape for FLOPs")->check(kShapeValidator);
  ablate->add_option("--mode", mode,
                     "cost: params and FLOPs only; train: also train each variant and report "
                     "held-out foreground DSC (default: train for decoder, cost otherwise)")
      ->check(CLI::IsMember({"cost", "train"}));
  ablate->add_option("--steps", steps, "Override train.steps")->check(CLI::PositiveNumber);
  ablate->add_option("--csv", csv_path, "Write the CSV here instead of stdout");

  try {
    std::vector<std::string> argv(args.rbegin(), args.rend());
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*describe) {
      const Config cfg = config_or_default(config_path);
      print_cost_report(out, count_params(cfg.model));
    } else if (*flops) {
      const Config cfg = config_or_default(config_path);
      const auto d = parse_shape(shape);
      print_cost_report(out, count_flops(cfg.model, d[0], d[1], d[2]));
    } else if (*gradcheck) {
      const auto report = run_gradcheck_suite(default_gradcheck_items(), filter, seed);
      print_gradcheck_report(out, report);
      if (report.entries.empty()) {
        err << "error: no gradient check matches '" << filter << "'\n";
        return kExitFailure;
      }
      return report.passed() ? kExitOk : kExitFailure;
    } else if (*train) {
      Config cfg = load_config(config_path);
      if (steps) cfg.train.steps = *steps;
      auto result = train_toy(cfg, [&out](int s, double l) { print_progress(out, s, l); });
      fs::create_directories(out_dir);
      write_report(out_dir, result.report, cfg);
      save_checkpoint(fs::path(out_dir) / "model.ckpt", *result.params);
      out << "mean foreground dsc " << result.report.mean_foreground_dsc << "\n"
          << "wrote " << out_dir << "\n";
      if (result.report.diverged) {
        err << "error: training diverged\n";
        return kExitFailure;
      }
    } else if (*infer) {
      const Config cfg = load_config(config_path);
      auto net = build_network(cfg.model);
      ParamStore<float> params(net->layout, cfg.seed);
      load_checkpoint(ckpt, params);
      const Tensor<float> image = load_tlk1(in_path);
      const LabelVolume labels = predict_labels(*net, params, image);
      Tensor<float> pred(labels.shape);
      for (std::size_t i = 0; i < labels.data.size(); ++i) {
        pred.data()[i] = static_cast<float>(labels.data[i]);
      }
      save_tlk1(out_path, pred);
      out << "wrote " << out_path << " " << pred.shape().str() << "\n";
    } else if (*ablate) {
      Config base = config_or_default(config_path);
      if (steps) base.train.steps = *steps;
      const bool do_train = mode.empty() ? kind == AblationKind::decoder : mode == "train";
      const auto d = parse_shape(shape);
      std::vector<AblationRow> rows;
      for (const auto& [name, cfg] : ablation_variants(kind, base)) {
        const CostReport cost = count_flops(cfg.model, d[0], d[1], d[2]);
        AblationRow row{name, cost.total_params, cost.total_flops};
        if (do_train) {
          out << "training " << name << std::endl;
          const auto result = train_toy(cfg, [&out](int s, double l) { print_progress(out, s, l); });
          if (result.report.diverged) throw std::runtime_error(name + ": training diverged");
          row.dsc = result.report.mean_foreground_dsc;
        }
        rows.push_back(row);
      }
      if (csv_path.empty()) {
        write_ablation_csv(out, rows);
      } else {
        std::ofstream os(csv_path);
        if (!os) throw std::runtime_error("cannot write " + csv_path);
        write_ablation_csv(os, rows);
        out << "wrote " << csv_path << "\n";
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace translk::cli
