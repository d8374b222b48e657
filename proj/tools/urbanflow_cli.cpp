// urbanflow_cli: one entry point for the whole pipeline.
//
// Exit codes: 0 ok, 1 validation error, 2 runtime error, 3 non-convergence.

#include <omp.h>
#include <pthread.h>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "urbanflow/checkpoint.hpp"
#include "urbanflow/config.hpp"
#include "urbanflow/dataset.hpp"
#include "urbanflow/errors.hpp"
#include "urbanflow/field_ops.hpp"
#include "urbanflow/flow_oracle.hpp"
#include "urbanflow/scene.hpp"
#include "urbanflow/service.hpp"
#include "urbanflow/trainer.hpp"
#include "urbanflow/voxelizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace urbanflow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, j.dump(2) + "\n");
}

// Options every subcommand shares.
struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = -1;
  std::string manifest_path;
};

struct Run {
  std::string subcommand;
  std::vector<std::string> argv;
  Config cfg;
  json seeds = json::object();
  json artifacts = json::array();
  json result = json::object();
  fs::path manifest;
  Clock::time_point t0 = Clock::now();
  std::string started = utc_now();
};

// A run manifest is accepted wherever a config file is: its "config"
// member is replayed key by key.
void load_config(Config& cfg, const std::string& path) {
  const std::string text = [&] {
    try {
      return read_file(path);
    } catch (const std::exception&) {
      throw ValidationError("cannot read config " + path);
    }
  }();
  const auto j = json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("config")) {
    for (const auto& [k, v] : j["config"].items()) cfg.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    return;
  }
  cfg.load_text(text, path);
}

void prepare(Run& run, const Common& c) {
  if (!c.config_path.empty()) load_config(run.cfg, c.config_path);
  for (const auto& o : c.overrides) run.cfg.apply_override(o);
  if (c.threads >= 0) run.cfg.set("threads", std::to_string(c.threads));
  const auto threads = run.cfg.get_int("threads");
  if (threads < 0) throw ValidationError("threads must be >= 0");
  if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
  if (!c.manifest_path.empty()) run.manifest = c.manifest_path;
}

int worker_count(const Config& cfg) {
  const auto t = cfg.get_int("threads");
  return t > 0 ? static_cast<int>(t) : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

void finish(Run& run, int exit_code) {
  if (run.manifest.empty()) return;
  json m{{"subcommand", run.subcommand},
         {"argv", run.argv},
         {"config", run.cfg.to_json()},
         {"seeds", run.seeds},
         {"artifacts", run.artifacts},
         {"result", run.result},
         {"started_utc", run.started},
         {"wall_seconds", seconds_since(run.t0)},
         {"exit_code", exit_code}};
  try {
    write_json(run.manifest, m);
  } catch (const std::exception& e) {
    std::cerr << "warning: could not write run manifest: " << e.what() << "\n";
  }
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "Config file (key = value) or an earlier run manifest");
  sub->add_option("--set", c.overrides, "Override one config key: --set flow.tau=0.9 (repeatable)");
  sub->add_option("--threads", c.threads, "Cap worker threads (0 = all cores); same as --set threads=N");
  sub->add_option("--manifest", c.manifest_path, "Where to write the run manifest (default: next to the output)");
}

Direction parse_direction(const std::string& s) { return direction_from_string(s); }

// ---------------------------------------------------------------------------

int cmd_gen_scenes(Run& run, const fs::path& out, int count, std::int64_t seed) {
  if (count >= 0) run.cfg.set("scene.count", std::to_string(count));
  if (seed >= 0) run.cfg.set("scene.seed", std::to_string(seed));
  const auto domain = domain_spec(run.cfg);
  const auto params = scene_params(run.cfg);
  const int n = static_cast<int>(run.cfg.get_int("scene.count"));
  const auto base = static_cast<std::uint64_t>(run.cfg.get_int("scene.seed"));
  if (n < 1) throw ValidationError("scene.count must be >= 1");
  run.seeds["scene.seed"] = base;
  fs::create_directories(out);
  for (int i = 0; i < n; ++i) {
    const Scene s = generate_scene(domain, params, mix_seed(base, static_cast<std::uint64_t>(i)));
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i << ".json";
    write_json(out / name.str(), to_json(s));
    run.artifacts.push_back((out / name.str()).string());
  }
  run.result = {{"scenes", n}};
  std::cout << "wrote " << n << " scenes to " << out << "\n";
  return 0;
}

int cmd_voxelize(Run& run, const fs::path& scene_path, const fs::path& out, const std::string& obj) {
  json j;
  try {
    j = json::parse(read_file(scene_path));
  } catch (const json::exception& e) {
    throw ValidationError(scene_path.string() + ": " + e.what());
  }
  const Scene scene = scene_from_json(j);
  const VoxelGrid occ = voxelize(scene);
  write_file_atomic(out, encode_vxg(occ));
  run.artifacts.push_back(out.string());
  if (!obj.empty()) {
    write_file_atomic(obj, to_obj(scene_to_mesh(scene)));
    run.artifacts.push_back(obj);
  }
  run.result = {{"dims", occ.dims()}, {"occupancy_fraction", occupancy_fraction(occ)}};
  std::cout << "occupancy " << occ.nx() << "x" << occ.ny() << "x" << occ.nz() << ", fraction "
            << occupancy_fraction(occ) << "\n";
  return 0;
}

int cmd_solve(Run& run, const fs::path& in, const fs::path& out, const std::string& history) {
  const VoxelGrid occ = read_vxg(in);
  FlowConfig flow = flow_config(run.cfg);
  flow.threads = worker_count(run.cfg);
  const auto t0 = Clock::now();
  const FlowSolution sol = solve_steady(occ, flow);
  const double secs = seconds_since(t0);
  if (!history.empty()) {
    std::ostringstream os;
    os << "check,step,residual\n";
    for (std::size_t i = 0; i < sol.residual_history.size(); ++i)
      os << i << ',' << (i + 1) * static_cast<std::size_t>(flow.check_interval) << ',' << sol.residual_history[i]
         << '\n';
    write_file_atomic(history, os.str());
    run.artifacts.push_back(history);
  }
  run.result = {{"steps", sol.steps}, {"residual", sol.residual}, {"converged", sol.converged}, {"seconds", secs}};
  if (!sol.converged) {
    std::ostringstream os;
    os << "oracle did not converge: residual " << sol.residual << " after " << sol.steps << " steps (tol "
       << flow.convergence_tol << ")";
    throw NotConverged(os.str());
  }
  write_file_atomic(out, encode_vxg(sol.velocity));
  run.artifacts.push_back(out.string());
  std::cout << "converged in " << sol.steps << " steps (" << secs << " s), residual " << sol.residual << "\n";
  return 0;
}

SplitManifest ensure_split(Run& run, const fs::path& data, const DatasetManifest& man) {
  if (fs::exists(data / "split.json")) return read_split(data);
  const auto s = split(man.ids, run.cfg.get_float("dataset.split_ratio"),
                       static_cast<std::uint64_t>(run.cfg.get_int("dataset.split_seed")));
  write_split(data, s);
  run.artifacts.push_back((data / "split.json").string());
  return s;
}

int cmd_build_dataset(Run& run, const fs::path& out, int count) {
  if (count >= 0) run.cfg.set("dataset.count", std::to_string(count));
  DatasetSpec spec = dataset_spec(run.cfg);
  spec.workers = worker_count(run.cfg);
  run.seeds["dataset.seed"] = spec.seed;
  run.seeds["dataset.split_seed"] = run.cfg.get_int("dataset.split_seed");
  int done = 0;
  const auto t0 = Clock::now();
  const auto man = build_dataset(out, spec, [&](const SampleMeta& m) {
    ++done;
    std::cerr << "[" << done << "/" << spec.count << "] " << m.id << " steps " << m.steps << " residual "
              << m.residual << (m.attempt ? " (retry " + std::to_string(m.attempt) + ")" : "") << "\n";
  });
  const auto s = split(man.ids, run.cfg.get_float("dataset.split_ratio"),
                       static_cast<std::uint64_t>(run.cfg.get_int("dataset.split_seed")));
  write_split(out, s);
  run.artifacts.push_back((out / "manifest.json").string());
  run.artifacts.push_back((out / "split.json").string());
  run.result = {{"samples", man.ids.size()},
                {"retries", man.retries},
                {"train", s.train_ids.size()},
                {"test", s.test_ids.size()},
                {"seconds", seconds_since(t0)}};
  std::cout << "dataset: " << man.ids.size() << " samples (" << s.train_ids.size() << " train / "
            << s.test_ids.size() << " test), " << man.retries << " retries\n";
  return 0;
}

int cmd_train(Run& run, const fs::path& data, const std::string& dir_s, const fs::path& out,
              const std::string& init, int epochs) {
  const Direction dir = parse_direction(dir_s);
  if (epochs >= 0) run.cfg.set("train.epochs", std::to_string(epochs));
  const TrainConfig tc = train_config(run.cfg, dir);
  const auto man = load_manifest(data);
  const auto sp = ensure_split(run, data, man);
  std::cerr << "loading " << sp.train_ids.size() << " train / " << sp.test_ids.size() << " test samples\n";
  const auto train_set = load_samples(data, sp.train_ids);
  const auto test_set = load_samples(data, sp.test_ids);

  ModelConfig mc = model_config(run.cfg, dir);
  mc.velocity_scale_mps = man.velocity_scale_mps;
  UNet model = init.empty() ? UNet(mc, static_cast<std::uint64_t>(run.cfg.get_int("model.seed")))
                            : load_checkpoint(init);
  if (model.config().direction != dir) throw ValidationError("--init checkpoint has the wrong direction");
  if (!dims_supported(man.dims, model.config().levels)) {
    const auto p = padded_dims(man.dims, model.config().levels);
    throw ValidationError("dataset dims are not divisible for model.levels; pad the domain to " +
                          std::to_string(p[0]) + "x" + std::to_string(p[1]) + "x" + std::to_string(p[2]));
  }
  run.seeds["model.seed"] = run.cfg.get_int("model.seed");
  run.seeds["train.seed"] = tc.seed;

  const BatchOptions opt = tc.batch_options();
  const double baseline = test_set.empty() ? std::nan("") : eval_baseline(train_set, test_set, opt);
  std::cerr << "model: " << model.count_parameters() << " parameters; mean-field baseline test MSE " << baseline
            << "\n";
  const auto res = train(model, train_set, test_set, tc, out, [&](const TrainRecord& r) {
    std::cerr << "epoch " << r.epoch << " train_mse " << r.train_mse;
    if (r.test_mse) std::cerr << " test_mse " << *r.test_mse;
    std::cerr << " (" << std::fixed << std::setprecision(1) << r.seconds << " s)" << std::defaultfloat
              << std::setprecision(6) << "\n";
  });

  json metrics{{"direction", to_string(dir)},
               {"baseline_test_mse", test_set.empty() ? json() : json(baseline)},
               {"best_epoch", res.best_epoch},
               {"best_loss", res.best_loss},
               {"epochs", tc.epochs}};
  metrics["final_train"] = evaluate(res.final, train_set, opt, tc.batch_size).to_json();
  if (!test_set.empty()) {
    metrics["final_test"] = evaluate(res.final, test_set, opt, tc.batch_size).to_json();
    metrics["best_test"] = evaluate(res.best, test_set, opt, tc.batch_size).to_json();
    if (dir == Direction::Reverse) {
      // an empty prediction scores IoU 0 and accuracy 1 - occupancy fraction
      std::vector<float> zeros;
      MetricAccumulator empty(Direction::Reverse, 1.0);
      for (const auto& s : test_set) {
        zeros.assign(s.occupancy.size(), 0.0f);
        empty.add(zeros, s.occupancy.data(), 1);
      }
      metrics["empty_baseline_test"] = empty.finish().to_json();
    }
  }
  write_json(out / "metrics.json", metrics);
  for (const char* f : {"best.ckp", "final.ckp", "train_log.csv", "train_log.json", "metrics.json"})
    run.artifacts.push_back((out / f).string());
  run.result = metrics;
  std::cout << metrics.dump(2) << "\n";
  return 0;
}

int cmd_eval(Run& run, const fs::path& data, const std::string& ckp, const std::string& split_name,
             const std::string& dir_s, const std::string& predictions, const std::string& suffix,
             bool normalized, const std::string& out) {
  const auto man = load_manifest(data);
  std::vector<std::string> ids;
  if (split_name == "all") {
    ids = man.ids;
  } else {
    const auto sp = ensure_split(run, data, man);
    if (split_name == "train") ids = sp.train_ids;
    else if (split_name == "test") ids = sp.test_ids;
    else throw ValidationError("--split must be train, test or all");
  }
  const auto samples = load_samples(data, ids);
  json report{{"split", split_name}, {"samples", ids.size()}};
  if (!ckp.empty()) {
    const UNet model = load_checkpoint(ckp);
    BatchOptions opt;
    opt.direction = model.config().direction;
    opt.mask_input = run.cfg.get_bool("train.mask_input");
    opt.mask_cutoff = run.cfg.get_float("train.mask_cutoff");
    report["checkpoint"] = ckp;
    report["metrics"] = evaluate(model, samples, opt, static_cast<int>(run.cfg.get_int("train.batch_size"))).to_json();
  } else if (!predictions.empty()) {
    // stored predictions, in m/s (forward) or probabilities (reverse)
    const Direction dir = parse_direction(dir_s);
    MetricAccumulator acc(dir, man.velocity_scale_mps);
    const float inv = normalized ? 1.0f : static_cast<float>(1.0 / man.velocity_scale_mps);
    for (const auto& s : samples) {
      VoxelGrid p = read_vxg(fs::path(predictions) / (s.id + suffix));
      const VoxelGrid& target = dir == Direction::Forward ? s.velocity : s.occupancy;
      if (p.dims() != target.dims() || p.channels() != target.channels())
        throw ValidationError("prediction for " + s.id + " does not match its target's shape");
      if (dir == Direction::Forward)
        for (auto& v : p.data()) v *= inv;
      acc.add(p.data(), target.data(), 1);
    }
    report["predictions"] = predictions;
    report["metrics"] = acc.finish().to_json();
  } else {
    throw ValidationError("eval needs --checkpoint or --predictions");
  }
  if (!out.empty()) {
    write_json(out, report);
    run.artifacts.push_back(out);
  }
  run.result = report["metrics"];
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_predict(Run& run, const std::string& ckp, const fs::path& in, const fs::path& out, const std::string& mode,
                const std::string& dir_check) {
  const UNet model = load_checkpoint(ckp);
  if (!dir_check.empty() && parse_direction(dir_check) != model.config().direction)
    throw ValidationError("--direction " + dir_check + " does not match the checkpoint (" +
                          to_string(model.config().direction) + ")");
  VoxelGrid input = read_vxg(in);
  if (model.config().direction == Direction::Reverse && mode == "mask")
    input = mask_to_target_field(input, model.config().velocity_scale_mps);
  else if (mode != "field")
    throw ValidationError("--mode must be field or mask (mask applies to reverse models only)");
  if (model.config().direction == Direction::Forward && !input.is_binary())
    throw ValidationError(in.string() + ": occupancy must contain only 0 and 1");
  const auto t0 = Clock::now();
  Dims3 pad{};
  const VoxelGrid y = predict_padded(model, input, &pad);
  const double ms = seconds_since(t0) * 1000.0;
  write_file_atomic(out, encode_vxg(y));
  run.artifacts.push_back(out.string());
  run.result = {{"inference_ms", ms}, {"padding", pad}, {"dims", y.dims()}, {"channels", y.channels()}};
  std::cout << "wrote " << out << " (" << y.channels() << " channels, " << ms << " ms)\n";
  return 0;
}

int cmd_bench(Run& run, const std::string& ckp, const std::string& data, int count, int repeats,
              const std::string& out) {
  if (count < 1) throw ValidationError("--count must be >= 1");
  if (repeats < 1) throw ValidationError("--repeats must be >= 1");
  const UNet model = load_checkpoint(ckp);
  if (model.config().direction != Direction::Forward) throw ValidationError("bench needs a forward checkpoint");
  FlowConfig flow = flow_config(run.cfg);
  flow.threads = worker_count(run.cfg);

  std::vector<VoxelGrid> grids;
  if (!data.empty()) {
    const auto man = load_manifest(data);
    const auto sp = ensure_split(run, data, man);
    flow = flow_config_from_json(man.spec.at("flow"), flow);
    flow.threads = worker_count(run.cfg);
    for (int i = 0; i < count && i < static_cast<int>(sp.test_ids.size()); ++i)
      grids.push_back(load_sample(data, sp.test_ids[static_cast<std::size_t>(i)]).occupancy);
  } else {
    const auto domain = domain_spec(run.cfg);
    const auto params = scene_params(run.cfg);
    const auto seed = static_cast<std::uint64_t>(run.cfg.get_int("scene.seed"));
    run.seeds["scene.seed"] = seed;
    for (int i = 0; i < count; ++i)
      grids.push_back(voxelize(generate_scene(domain, params, mix_seed(seed, 0xBE7C0000ull + i))));
  }
  if (grids.empty()) throw ValidationError("no grids to benchmark");

  json rows = json::array();
  double oracle_ms = 0, surrogate_ms = 0;
  predict_padded(model, grids[0]);  // warm-up: first-touch allocations
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto t0 = Clock::now();
    const auto sol = solve_steady(grids[i], flow);
    const double o = seconds_since(t0) * 1000.0;
    double s = 0;
    for (int r = 0; r < repeats; ++r) {
      const auto t1 = Clock::now();
      predict_padded(model, grids[i]);
      s += seconds_since(t1) * 1000.0;
    }
    s /= repeats;
    oracle_ms += o;
    surrogate_ms += s;
    rows.push_back({{"grid", i}, {"oracle_ms", o}, {"oracle_steps", sol.steps}, {"converged", sol.converged},
                    {"surrogate_ms", s}});
    std::cerr << "grid " << i << ": oracle " << o << " ms (" << sol.steps << " steps), surrogate " << s << " ms\n";
  }
  oracle_ms /= static_cast<double>(grids.size());
  surrogate_ms /= static_cast<double>(grids.size());
  const auto& d = grids[0].dims();
  json report{
      {"grids", grids.size()},
      {"dims", d},
      {"threads", worker_count(run.cfg)},
      {"mean_oracle_ms", oracle_ms},
      {"mean_surrogate_ms", surrogate_ms},
      {"speedup", oracle_ms / surrogate_ms},
      {"per_grid", rows},
      {"reference_claim",
       "three orders of magnitude faster than a finite-volume CFD solver (OpenFOAM) on 256x128x64 m domains at 1 m "
       "voxels"},
      {"caveat",
       "not comparable in absolute terms: 64x fewer voxels here, a different solver (lattice Boltzmann vs "
       "finite volume), different hardware, and CPU-only inference"}};
  if (!out.empty()) {
    write_json(out, report);
    run.artifacts.push_back(out);
  }
  run.result = {{"mean_oracle_ms", oracle_ms}, {"mean_surrogate_ms", surrogate_ms}, {"speedup", oracle_ms / surrogate_ms}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_serve(Run& run, const std::string& forward, const std::string& reverse, const std::string& host, int port) {
  run.cfg.apply_env("service.", [](const std::string& k) -> std::optional<std::string> {
    if (const char* v = std::getenv(k.c_str())) return std::string(v);
    return std::nullopt;
  });
  if (!forward.empty()) run.cfg.set("service.forward_checkpoint", forward);
  if (!reverse.empty()) run.cfg.set("service.reverse_checkpoint", reverse);
  if (!host.empty()) run.cfg.set("service.host", host);
  if (port >= 0) run.cfg.set("service.port", std::to_string(port));
  InferenceService svc(service_config(run.cfg));
  svc.set_log(&std::cerr);
  // block the shutdown signals before the server threads exist so that only
  // the sigwait below receives them
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
  const int bound = svc.start();
  std::cout << "listening on http://" << svc.config().host << ":" << bound << "/v1" << std::endl;
  run.result = {{"port", bound}};
  int sig = 0;
  sigwait(&stop_signals, &sig);
  svc.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urbanflow: wind-flow surrogate over voxelized urban geometry"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Run run;
  for (int i = 0; i < argc; ++i) run.argv.emplace_back(argv[i]);
  Common common;
  std::function<int()> action;

  // gen-scenes
  std::string out_s;
  int count = -1;
  std::int64_t seed = -1;
  auto* gen = app.add_subcommand("gen-scenes", "Generate random building scenes as JSON");
  add_common(gen, common);
  gen->add_option("-o,--out", out_s, "Output directory")->required();
  gen->add_option("-n,--count", count, "Number of scenes (scene.count)");
  gen->add_option("--seed", seed, "Base seed (scene.seed)");
  gen->callback([&] {
    action = [&] {
      if (run.manifest.empty()) run.manifest = fs::path(out_s) / "run_manifest.json";
      return cmd_gen_scenes(run, out_s, count, seed);
    };
  });

  // voxelize
  std::string scene_s, obj_s;
  auto* vox = app.add_subcommand("voxelize", "Voxelize a scene JSON to a VXG1 occupancy grid");
  add_common(vox, common);
  vox->add_option("-s,--scene", scene_s, "Scene JSON")->required()->check(CLI::ExistingFile);
  vox->add_option("-o,--out", out_s, "Output VXG1 file")->required();
  vox->add_option("--obj", obj_s, "Also write the building mesh as OBJ");
  vox->callback([&] {
    action = [&] {
      if (run.manifest.empty()) run.manifest = out_s + ".manifest.json";
      return cmd_voxelize(run, scene_s, out_s, obj_s);
    };
  });

  // solve
  std::string in_s, history_s;
  auto* sol = app.add_subcommand("solve", "Run the flow oracle to steady state");
  add_common(sol, common);
  sol->add_option("-i,--occupancy", in_s, "Occupancy VXG1")->required()->check(CLI::ExistingFile);
  sol->add_option("-o,--out", out_s, "Velocity VXG1 (m/s)")->required();
  sol->add_option("--history", history_s, "Residual history CSV");
  sol->callback([&] {
    action = [&] {
      if (run.manifest.empty()) run.manifest = out_s + ".manifest.json";
      return cmd_solve(run, in_s, out_s, history_s);
    };
  });

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "Generate, solve and store a training dataset (resumable)");
  add_common(bd, common);
  bd->add_option("-o,--out", out_s, "Dataset directory")->required();
  bd->add_option("-n,--count", count, "Samples (dataset.count)");
  bd->callback([&] {
    action = [&] {
      if (run.manifest.empty()) run.manifest = fs::path(out_s) / "run_manifest.json";
      return cmd_build_dataset(run, out_s, count);
    };
  });

  // train
  std::string data_s, direction_s = "forward", init_s;
  int epochs = -1;
  auto* tr = app.add_subcommand("train", "Train a forward or reverse model");
  add_common(tr, common);
  tr->add_option("-d,--data", data_s, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--direction", direction_s, "forward | reverse")->check(CLI::IsMember({"forward", "reverse"}));
  tr->add_option("-o,--out", out_s, "Run directory for checkpoints and logs")->required();
  tr->add_option("--init", init_s, "Start from this checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--epochs", epochs, "Epochs (train.epochs)");
  tr->callback([&] {
    action = [&] {
      if (run.manifest.empty()) run.manifest = fs::path(out_s) / "run_manifest.json";
      return cmd_train(run, data_s, direction_s, out_s, init_s, epochs);
    };
  });

  // eval
  std::string ckp_s, split_s = "test", pred_s, suffix_s = ".vxg";
  bool normalized = false;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint or stored predictions against a dataset split");
  add_common(ev, common);
  ev->add_option("-d,--data", data_s, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--checkpoint", ckp_s, "Model checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--predictions", pred_s, "Directory of <id><suffix> prediction grids")->check(CLI::ExistingDirectory);
  ev->add_option("--suffix", suffix_s, "Prediction file suffix");
  ev->add_flag("--normalized", normalized, "Forward predictions are already divided by the reference speed");
  ev->add_option("--direction", direction_s, "Direction of --predictions")->check(CLI::IsMember({"forward", "reverse"}));
  ev->add_option("--split", split_s, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  ev->add_option("-o,--out", out_s, "Write the report here as JSON");
  ev->callback([&] {
    action = [&] {
      if (run.manifest.empty() && !out_s.empty()) run.manifest = out_s + ".manifest.json";
      return cmd_eval(run, data_s, ckp_s, split_s, direction_s, pred_s, suffix_s, normalized, out_s);
    };
  });

  // predict
  std::string mode_s = "field", pdir_s;
  auto* pr = app.add_subcommand("predict", "Run a model on a stored grid");
  add_common(pr, common);
  pr->add_option("--checkpoint", ckp_s, "Model checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("-i,--input", in_s, "Input VXG1: occupancy (forward) or velocity m/s / mask (reverse)")
      ->required()
      ->check(CLI::ExistingFile);
  pr->add_option("-o,--out", out_s, "Output VXG1")->required();
  pr->add_option("--direction", pdir_s, "Assert the checkpoint direction")->check(CLI::IsMember({"forward", "reverse"}));
  pr->add_option("--mode", mode_s, "Reverse input: field | mask")->check(CLI::IsMember({"field", "mask"}));
  pr->callback([&] {
    action = [&] {
      if (run.manifest.empty()) run.manifest = out_s + ".manifest.json";
      return cmd_predict(run, ckp_s, in_s, out_s, mode_s, pdir_s);
    };
  });

  // bench
  int bench_count = 10, repeats = 5;
  auto* be = app.add_subcommand("bench", "Time the oracle against the surrogate on identical grids");
  add_common(be, common);
  be->add_option("--checkpoint", ckp_s, "Forward checkpoint")->required()->check(CLI::ExistingFile);
  be->add_option("-d,--data", data_s, "Take grids from this dataset's test split (else generate)")
      ->check(CLI::ExistingDirectory);
  be->add_option("-n,--count", bench_count, "Grids");
  be->add_option("--repeats", repeats, "Surrogate timings averaged per grid");
  be->add_option("-o,--out", out_s, "Write the report here as JSON");
  be->callback([&] {
    action = [&] {
      if (run.manifest.empty() && !out_s.empty()) run.manifest = out_s + ".manifest.json";
      return cmd_bench(run, ckp_s, data_s, bench_count, repeats, out_s);
    };
  });

  // serve
  std::string fwd_s, rev_s, host_s;
  int port = -1;
  auto* sv = app.add_subcommand("serve", "Run the HTTP inference service");
  add_common(sv, common);
  sv->add_option("--forward", fwd_s, "Forward checkpoint (service.forward_checkpoint)");
  sv->add_option("--reverse", rev_s, "Reverse checkpoint (service.reverse_checkpoint)");
  sv->add_option("--host", host_s, "Bind address (service.host)");
  sv->add_option("--port", port, "Bind port, 0 = any (service.port)");
  sv->callback([&] { action = [&] { return cmd_serve(run, fwd_s, rev_s, host_s, port); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  run.subcommand = app.get_subcommands().front()->get_name();

  int code = 0;
  try {
    prepare(run, common);
    code = action();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 1;
  } catch (const NotConverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 3;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  }
  finish(run, code);
  return code;
}
