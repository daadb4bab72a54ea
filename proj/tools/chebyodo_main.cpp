// chebyodo: train, evaluate, and probe Chebyshev-KAN inertial odometry
// models from the command line. One binary, six subcommands; every run echoes
// its fully resolved configuration before acting.
//
// Exit codes: 0 success; 1 configuration, contract, shape, domain, or format
// problems; 2 numerical failures (divergence, NaN loss, gradient mismatch).

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chebyodo/data.hpp"
#include "chebyodo/errors.hpp"
#include "chebyodo/eksa.hpp"
#include "chebyodo/evaluation.hpp"
#include "chebyodo/gradcheck.hpp"
#include "chebyodo/runconfig.hpp"
#include "chebyodo/training.hpp"

namespace fs = std::filesystem;
using namespace chebyodo;

namespace {

// All pipelines currently run on one worker; the cap from CHEBYODO_THREADS is
// validated and reported so configured environments behave predictably.
// Returns 0 when the variable is unset.
int thread_cap() {
  const char* raw = std::getenv("CHEBYODO_THREADS");
  if (raw == nullptr || *raw == '\0') return 0;
  char* end = nullptr;
  const long value = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || value < 1) {
    throw ContractError("CHEBYODO_THREADS must be a positive integer, got '" +
                        std::string(raw) + "'");
  }
  return static_cast<int>(value);
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve(const CommonFlags& flags) {
  RunConfig config =
      flags.config_path.empty() ? RunConfig{} : load_run_config(flags.config_path);
  if (flags.seed) {
    config.model.seed = *flags.seed;
    config.synth.base_seed = *flags.seed;
  }
  return config;
}

void echo_preamble(const std::string& command, const RunConfig& config) {
  const int cap = thread_cap();
  std::cout << "command = " << command << '\n';
  std::cout << "workers = 1";
  if (cap > 0) std::cout << " (cap " << cap << " from CHEBYODO_THREADS)";
  std::cout << '\n';
  echo_run_config(config, std::cout);
  std::cout << std::flush;
}

std::vector<fs::path> sequence_files(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw ContractError("'" + dir + "' is not a directory");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.extension() != ".csv") continue;
    if (p.filename() == "manifest.csv") continue;
    files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw ContractError("no sequence files (*.csv) found in '" + dir + "'");
  }
  return files;
}

ImuSequence read_sequence_labeled(const fs::path& path) {
  try {
    return read_sequence(path.string());
  } catch (const FormatError& e) {
    const std::string what = e.what();
    if (what.find(path.string()) != std::string::npos) throw;
    throw FormatError(path.string() + ": " + what);
  }
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write '" + path.string() + "'");
  return out;
}

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- synth ---------------------------------------------------------------

void cmd_synth(const CommonFlags& flags, const std::string& out_dir) {
  const RunConfig config = resolve(flags);
  echo_preamble("synth", config);

  fs::create_directories(out_dir);
  const std::vector<SynthSpec> specs = synth_specs(config.synth);
  std::ofstream manifest = open_output(fs::path(out_dir) / "manifest.csv");
  manifest << "filename,shape,seed,samples,duration_s,sample_rate_hz,gravity_removed\n";
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const SynthSpec& spec = specs[i];
    const ImuSequence seq = synthesize(spec);
    char name[64];
    std::snprintf(name, sizeof name, "seq_%03zu_%s.csv", i, shape_name(spec.shape));
    const fs::path path = fs::path(out_dir) / name;
    write_sequence(seq, path.string());
    manifest << name << ',' << shape_name(spec.shape) << ',' << spec.seed << ','
             << seq.size() << ',' << format_g(spec.duration) << ','
             << format_g(spec.sample_rate_hz) << ','
             << (seq.gravity_removed ? "true" : "false") << '\n';
    std::cout << "wrote " << path.string() << " (" << seq.size() << " samples)\n";
  }
  std::cout << "wrote " << (fs::path(out_dir) / "manifest.csv").string() << '\n';
}

// ---- preprocess ------------------------------------------------------------

void cmd_preprocess(const CommonFlags& flags, const std::string& in_dir,
                    const std::string& out_dir, bool remove_grav) {
  const RunConfig config = resolve(flags);
  echo_preamble("preprocess", config);
  std::cout << "input = " << in_dir << '\n';
  std::cout << "remove_gravity = " << (remove_grav ? "true" : "false") << '\n';

  fs::create_directories(out_dir);
  for (const fs::path& path : sequence_files(in_dir)) {
    ImuSequence seq = read_sequence_labeled(path);
    if (remove_grav) seq = remove_gravity(seq);
    const fs::path out_path = fs::path(out_dir) / path.filename();
    write_sequence(seq, out_path.string());
    std::cout << "wrote " << out_path.string() << " (" << seq.size() << " samples, "
              << (seq.gravity_removed ? "gravity removed" : "gravity present") << ")\n";
  }
}

// ---- train -----------------------------------------------------------------

void cmd_train(const CommonFlags& flags, const std::string& data_dir,
               const std::string& out_path) {
  const RunConfig config = resolve(flags);
  echo_preamble("train", config);

  const ModelConfig resolved = resolve_config(config.model);
  const std::vector<fs::path> files = sequence_files(data_dir);
  const int val_count = config.pipeline.val_sequences;
  if (val_count < 1) throw ContractError("pipeline.val_sequences must be >= 1");
  if (static_cast<int>(files.size()) <= val_count) {
    throw ContractError("need more than " + std::to_string(val_count) +
                        " sequences in '" + data_dir + "' to hold out " +
                        std::to_string(val_count) + " for validation");
  }

  std::vector<WindowBatch> train_parts;
  std::vector<WindowBatch> val_parts;
  const std::size_t train_count = files.size() - static_cast<std::size_t>(val_count);
  for (std::size_t i = 0; i < files.size(); ++i) {
    const ImuSequence seq = read_sequence_labeled(files[i]);
    WindowBatch windows =
        make_windows(seq, resolved.window_size, config.pipeline.train_stride,
                     config.pipeline.require_gravity_removed);
    const bool is_val = i >= train_count;
    std::cout << (is_val ? "val   " : "train ") << files[i].filename().string() << ": "
              << windows.count() << " windows\n";
    (is_val ? val_parts : train_parts).push_back(std::move(windows));
  }
  const WindowBatch train_batch = merge_windows(train_parts);
  const WindowBatch val_batch = merge_windows(val_parts);
  std::cout << "train windows = " << train_batch.count() << '\n';
  std::cout << "val windows = " << val_batch.count() << '\n';

  {
    // Deterministic init lets us report the size up front; training re-derives
    // the identical model from the same seed.
    const Model probe = Model::init(resolved);
    std::size_t count = 0;
    for (const auto& [name, tensor] : probe.parameters()) count += tensor.size();
    std::cout << "parameters = " << count
              << (resolved.eksa_enabled ? "" : " (attention ablated)") << '\n';
  }

  const TrainResult result = train(resolved, train_batch, val_batch);
  for (const EpochStats& row : result.log) {
    std::cout << "epoch " << row.epoch << ": train_mse=" << format_g(row.train_mse)
              << " val_mse=" << format_g(row.val_mse) << " wall_s=" << row.wall_s << '\n';
  }
  std::cout << "zero-predictor val mse = " << format_g(zero_predictor_mse(val_batch))
            << '\n';
  std::cout << "best epoch " << result.best_epoch
            << " (val_mse=" << format_g(result.best_val_mse) << ")\n";

  if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  save_checkpoint(result.checkpoint, out_path);
  std::cout << "wrote checkpoint " << out_path << '\n';
  const std::string metrics_path = out_path + ".metrics.csv";
  std::ofstream metrics = open_output(metrics_path);
  write_metrics_csv(result.log, metrics);
  std::cout << "wrote metrics " << metrics_path << '\n';
}

// ---- eval ------------------------------------------------------------------

void cmd_eval(const CommonFlags& flags, const std::string& ckpt_path,
              const std::string& data_dir, const std::string& out_dir) {
  const RunConfig config = resolve(flags);
  echo_preamble("eval", config);

  const Checkpoint checkpoint = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(checkpoint);
  std::cout << "checkpoint = " << ckpt_path << " (window_size "
            << model.config.window_size << ")\n";

  fs::create_directories(out_dir);
  std::ofstream summary = open_output(fs::path(out_dir) / "summary.csv");
  summary << "sequence,ate,rte,pde,traj_len_m\n";
  for (const fs::path& path : sequence_files(data_dir)) {
    const ImuSequence seq = read_sequence_labeled(path);
    const TrajectoryReport report = evaluate_sequence(
        model, seq, config.pipeline.eval_stride, config.pipeline.rte_interval_s);

    const std::string stem = path.stem().string();
    const fs::path seq_dir = fs::path(out_dir) / stem;
    fs::create_directories(seq_dir);
    std::ofstream metrics = open_output(seq_dir / "metrics.csv");
    write_report_metrics(report, metrics);
    std::ofstream trajectory = open_output(seq_dir / "trajectory.csv");
    write_report_trajectory(report, trajectory);
    std::ofstream cdf = open_output(seq_dir / "cdf.csv");
    write_report_cdf(report, cdf);

    summary << stem << ',' << format_g(report.ate) << ',' << format_g(report.rte) << ','
            << format_g(report.pde) << ',' << format_g(report.traj_length) << '\n';
    std::cout << stem << ": ate=" << format_g(report.ate) << " rte=" << format_g(report.rte)
              << (report.rte_scaled ? " (scaled)" : "") << " pde=" << format_g(report.pde)
              << " traj_len=" << format_g(report.traj_length) << '\n';
  }
  std::cout << "wrote " << (fs::path(out_dir) / "summary.csv").string() << '\n';
}

// ---- bench -----------------------------------------------------------------

void cmd_bench(const CommonFlags& flags, const std::string& out_path, int seq_len,
               int repetitions) {
  const RunConfig config = resolve(flags);
  echo_preamble("bench", config);

  const std::vector<int> grid = {256, 512, 1024, 2048};
  const std::vector<BenchRow> rows =
      complexity_bench(grid, seq_len, repetitions, config.model.eksa.taylor_order,
                       config.model.eksa.sigma, config.model.seed + 42);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::cout << "n=" << rows[i].n << ": softmax " << rows[i].t_softmax_us
              << " us, factorized " << rows[i].t_eksa_us << " us\n";
    if (i > 0) {
      std::cout << "  growth x" << static_cast<double>(rows[i].n) / rows[i - 1].n
                << ": softmax " << rows[i].t_softmax_us / rows[i - 1].t_softmax_us
                << ", factorized " << rows[i].t_eksa_us / rows[i - 1].t_eksa_us << '\n';
    }
  }
  std::ofstream out = open_output(out_path);
  write_bench_csv(rows, out);
  std::cout << "wrote " << out_path << '\n';
}

// ---- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const CommonFlags& flags, const std::string& inject_fault) {
  const RunConfig config = resolve(flags);
  echo_preamble("gradcheck", config);
  if (!inject_fault.empty()) {
    std::cout << "inject_fault = " << inject_fault << '\n';
  }

  const GradCheckReport report = run_gradcheck(1e-4, inject_fault);
  print_gradcheck_report(report, std::cout);
  if (!report.all_pass()) {
    for (const GradCheckRow& row : report.rows) {
      if (!row.pass) {
        std::cerr << "gradient mismatch in " << row.tensor << " (family " << row.family
                  << "): max rel err " << row.max_rel_err << '\n';
      }
    }
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "chebyodo: Chebyshev-KAN inertial odometry - synthesize IMU data, train, "
      "evaluate, benchmark attention, and verify gradients"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto add_common = [&flags](CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--config", flags.config_path,
                    "Run configuration file (key = value lines)");
    if (with_seed) {
      cmd->add_option("--seed", [&flags](const CLI::results_t& values) {
        std::uint64_t parsed = 0;
        if (!CLI::detail::lexical_cast(values[0], parsed)) return false;
        flags.seed = parsed;
        return true;
      },
      "Override model.seed and synth.base_seed");
    }
  };

  std::string out_path;
  std::string in_dir;
  std::string data_dir;
  std::string ckpt_path;
  bool remove_grav = false;
  std::string inject_fault;
  int bench_seq_len = 32;
  int bench_reps = 5;

  CLI::App* synth = app.add_subcommand("synth", "Write synthetic IMU sequences + manifest");
  add_common(synth);
  synth->add_option("--out", out_path, "Output directory")->required();

  CLI::App* preprocess = app.add_subcommand(
      "preprocess", "Re-read sequences, optionally removing gravity, and rewrite them");
  add_common(preprocess, /*with_seed=*/false);
  preprocess->add_option("--in", in_dir, "Input directory of sequence CSVs")->required();
  preprocess->add_option("--out", out_path, "Output directory")->required();
  preprocess->add_flag("--remove-gravity", remove_grav,
                       "Subtract gravity in the world frame (once only)");

  CLI::App* train_cmd =
      app.add_subcommand("train", "Train on a directory of sequences, write a checkpoint");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_dir, "Directory of training sequences")->required();
  train_cmd->add_option("--out", out_path, "Checkpoint output path")->required();

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint over sequences, write reports");
  add_common(eval_cmd, /*with_seed=*/false);
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  eval_cmd->add_option("--data", data_dir, "Directory of evaluation sequences")->required();
  eval_cmd->add_option("--out", out_path, "Report output directory")->required();

  CLI::App* bench =
      app.add_subcommand("bench", "Time factorized vs softmax attention over a token grid");
  add_common(bench);
  bench->add_option("--out", out_path, "Timing CSV output path")->required();
  bench->add_option("--seq-len", bench_seq_len, "Columns per token matrix (default 32)");
  bench->add_option("--reps", bench_reps, "Repetitions per grid point (default 5)");

  CLI::App* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Verify every layer family's gradients against finite differences");
  add_common(gradcheck_cmd, /*with_seed=*/false);
  gradcheck_cmd->add_option("--inject-fault", inject_fault,
                            "Corrupt one family's backward result to prove detection");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // Help and version requests exit 0; any real parse problem is a
    // configuration error.
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(flags, out_path);
    } else if (preprocess->parsed()) {
      cmd_preprocess(flags, in_dir, out_path, remove_grav);
    } else if (train_cmd->parsed()) {
      cmd_train(flags, data_dir, out_path);
    } else if (eval_cmd->parsed()) {
      cmd_eval(flags, ckpt_path, data_dir, out_path);
    } else if (bench->parsed()) {
      cmd_bench(flags, out_path, bench_seq_len, bench_reps);
    } else if (gradcheck_cmd->parsed()) {
      return cmd_gradcheck(flags, inject_fault);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
