// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
// Expensive artifacts (dataset, trained models, benchmark) live in
// --work-dir and are reused on the next run; delete the directory to start
// over. The dataset build itself is resumable.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "../common/gradcheck_cases.hpp"
#include "../common/oracle_cases.hpp"
#include "../common/service_probe.hpp"
#include "urbanflow/checkpoint.hpp"
#include "urbanflow/config.hpp"
#include "urbanflow/dataset.hpp"
#include "urbanflow/scene.hpp"
#include "urbanflow/service.hpp"
#include "urbanflow/trainer.hpp"
#include "urbanflow/voxelizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace urbanflow;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  json data = json::object();
};

struct Env {
  fs::path work;
  std::string cli;
  fs::path dataset() const { return work / "dataset"; }
  fs::path run_dir(const std::string& name) const { return work / "runs" / name; }
  fs::path log(const std::string& name) const { return work / "logs" / (name + ".log"); }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

// Runs the CLI with its chatter sent to a log file; returns the exit code.
int run_cli(const Env& env, const std::string& log_name, const std::vector<std::string>& args) {
  fs::create_directories(env.work / "logs");
  std::string cmd = quote(env.cli);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " > " + quote(env.log(log_name).string()) + " 2>&1";
  std::cerr << "  $ urbanflow_cli";
  for (const auto& a : args) std::cerr << " " << a;
  std::cerr << std::endl;
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128;
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

// A finished CLI run leaves a manifest with exit code 0 next to its outputs.
bool finished(const fs::path& dir, const std::string& artifact) {
  if (!fs::exists(dir / artifact) || !fs::exists(dir / "run_manifest.json")) return false;
  const auto m = json::parse(read_file(dir / "run_manifest.json"), nullptr, false);
  return !m.is_discarded() && m.value("exit_code", -1) == 0;
}

// ---------------------------------------------------------------------------

Outcome oracle_validity() {
  const auto t0 = Clock::now();
  Outcome o;
  const auto p = oracle_cases::poiseuille();

  FlowConfig slip;
  slip.ground_no_slip = false;
  const auto uniform = solve_steady(VoxelGrid({32, 16, 8}, 1), slip);
  double dev = 0;
  const double scale = slip.velocity_scale();
  for (std::int64_t k = 0; k < uniform.velocity.voxel_count(); ++k) {
    dev = std::max(dev, std::abs(uniform.velocity.channel(0)[k] / scale - slip.inlet_speed_lattice));
    dev = std::max(dev, std::abs(uniform.velocity.channel(1)[k] / scale));
    dev = std::max(dev, std::abs(uniform.velocity.channel(2)[k] / scale));
  }

  // drift per 1000 steps, worst of three consecutive windows
  double drift = 0;
  for (int w = 1; w <= 3; ++w) drift = std::max(drift, oracle_cases::closed_box_drift(1000 * w) / w);
  const double secs = since(t0);

  o.pass = p.converged && p.max_rel_error < 0.02 && uniform.converged && dev < slip.convergence_tol &&
           drift < 1e-3 && secs < 120;
  o.detail = "Poiseuille mid-channel max rel err " + fmt(100 * p.max_rel_error, 3) + "% (< 2%), uniform-flow max dev " +
             fmt(dev, 3) + " (< " + fmt(slip.convergence_tol) + "), closed-box mass drift " + fmt(100 * drift, 3) +
             "%/1000 steps (< 0.1%), " + fmt(secs, 3) + " s (< 120 s)";
  o.data = {{"poiseuille_max_rel_error", p.max_rel_error}, {"poiseuille_shape_error", p.shape_error},
            {"poiseuille_steps", p.steps},         {"uniform_max_dev", dev},
            {"mass_drift_per_1000", drift},        {"seconds", secs}};
  return o;
}

Outcome autodiff() {
  const auto t0 = Clock::now();
  Outcome o;
  const auto cases = testing::run_gradcheck_suite(20, 20260);
  std::map<std::string, std::pair<int, double>> per_op;
  for (const auto& c : cases) {
    auto& [n, worst] = per_op[c.op];
    ++n;
    worst = std::max(worst, c.checked > 0 ? c.max_rel_error : INFINITY);
  }
  bool ok = !per_op.empty();
  double worst_all = 0;
  int fewest = 1 << 30;
  for (const auto& [op, nw] : per_op) {
    ok = ok && nw.first >= 20 && nw.second < 1e-4;
    worst_all = std::max(worst_all, nw.second);
    fewest = std::min(fewest, nw.first);
    o.data["ops"][op] = {{"shapes", nw.first}, {"max_rel_error", nw.second}};
  }
  std::mt19937_64 rng(20261);
  double gap = 0;
  for (int k = 0; k < 25; ++k) gap = std::max(gap, testing::adjoint_gap(rng));
  const double secs = since(t0);
  o.pass = ok && gap < 1e-5 && secs < 300;
  o.detail = std::to_string(per_op.size()) + " ops x >= " + std::to_string(fewest) + " shapes, worst rel err " +
             fmt(worst_all, 3) + " (< 1e-4); adjoint gap " + fmt(gap, 3) + " (< 1e-5); " + fmt(secs, 3) +
             " s (< 300 s)";
  o.data["adjoint_gap"] = gap;
  o.data["seconds"] = secs;
  return o;
}

Outcome dataset_split() {
  Outcome o;
  std::vector<std::string> ids;
  for (int i = 0; i < 3500; ++i) {
    std::ostringstream id;
    id << 's' << std::setw(5) << std::setfill('0') << i;
    ids.push_back(id.str());
  }
  const auto s = split(ids, 0.95, 1);
  std::set<std::string> all(s.train_ids.begin(), s.train_ids.end());
  all.insert(s.test_ids.begin(), s.test_ids.end());
  o.pass = s.train_ids.size() == 3325 && s.test_ids.size() == 175 && all.size() == 3500;
  o.detail = "n=3500 -> " + std::to_string(s.train_ids.size()) + " train / " + std::to_string(s.test_ids.size()) +
             " test, disjoint and covering: " + (all.size() == 3500 ? "yes" : "no");
  o.data = {{"train", s.train_ids.size()}, {"test", s.test_ids.size()}};
  return o;
}

// Builds (or resumes) the desk dataset with the default configuration.
bool ensure_dataset(const Env& env, std::string& why) {
  if (finished(env.dataset(), "split.json")) return true;
  const auto t0 = Clock::now();
  const int rc = run_cli(env, "build-dataset", {"build-dataset", "-o", env.dataset().string()});
  if (rc != 0) {
    why = "build-dataset exited " + std::to_string(rc) + " (see " + env.log("build-dataset").string() + ")";
    return false;
  }
  std::cerr << "  dataset ready in " << fmt(since(t0), 4) << " s\n";
  return true;
}

bool ensure_training(const Env& env, const std::string& name, const std::vector<std::string>& extra,
                     std::string& why) {
  const auto dir = env.run_dir(name);
  if (finished(dir, "metrics.json")) return true;
  std::vector<std::string> args{"train", "-d", env.dataset().string(), "-o", dir.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto t0 = Clock::now();
  const int rc = run_cli(env, "train-" + name, args);
  if (rc != 0) {
    why = "train exited " + std::to_string(rc) + " (see " + env.log("train-" + name).string() + ")";
    return false;
  }
  std::cerr << "  " << name << " trained in " << fmt(since(t0), 4) << " s\n";
  return true;
}

Outcome forward_training(const Env& env) {
  Outcome o;
  std::string why;
  if (!ensure_dataset(env, why) || !ensure_training(env, "forward", {"--direction", "forward"}, why)) {
    o.detail = why;
    return o;
  }
  const auto m = read_json(env.run_dir("forward") / "metrics.json");
  const auto man = load_manifest(env.dataset());
  const double test_mse = m["final_test"]["mse"], baseline = m["baseline_test_mse"];
  const int epochs = m["epochs"];

  // overfit probe: two training samples, evaluated after training
  const auto probe_dir = env.run_dir("overfit");
  json probe;
  if (fs::exists(probe_dir / "probe.json")) {
    probe = read_json(probe_dir / "probe.json");
  } else {
    const auto t0 = Clock::now();
    const auto sp = read_split(env.dataset());
    const std::vector<Sample> two = load_samples(env.dataset(), {sp.train_ids[0], sp.train_ids[1]});
    Config cfg;
    UNet model(model_config(cfg, Direction::Forward), 1);
    TrainConfig tc = train_config(cfg, Direction::Forward);
    tc.epochs = 600;
    tc.batch_size = 1;
    tc.eval_every = 10;
    std::cerr << "  overfit probe: 2 samples, " << tc.epochs << " epochs" << std::endl;
    // the same two samples double as the selection set
    const auto res = train(model, two, two, tc, probe_dir);
    const auto ev = evaluate(res.best, two, tc.batch_options(), 1);
    probe = {{"ids", {sp.train_ids[0], sp.train_ids[1]}}, {"epochs", tc.epochs},
             {"batch_size", tc.batch_size},                {"learning_rate", tc.learning_rate},
             {"best_epoch", res.best_epoch},               {"train_mse", ev.mse},
             {"seconds", since(t0)}};
    write_file_atomic(probe_dir / "probe.json", probe.dump(2));
  }
  const double probe_mse = probe["train_mse"];

  o.pass = man.dims == Dims3{64, 32, 16} && man.ids.size() >= 200 && epochs >= 50 && test_mse < baseline &&
           probe_mse < 1e-3;
  o.detail = std::to_string(man.ids.size()) + " samples at " + std::to_string(man.dims[0]) + "x" +
             std::to_string(man.dims[1]) + "x" + std::to_string(man.dims[2]) + ", " + std::to_string(epochs) +
             " epochs: test MSE " + fmt(test_mse) + " < baseline " + fmt(baseline) + "; 2-sample overfit MSE " +
             fmt(probe_mse, 3) + " (< 1e-3)";
  o.data = {{"test_mse", test_mse}, {"baseline_test_mse", baseline}, {"overfit", probe}, {"metrics", m}};
  return o;
}

Outcome reverse_training(const Env& env) {
  Outcome o;
  std::string why;
  if (!ensure_dataset(env, why) || !ensure_training(env, "reverse", {"--direction", "reverse"}, why)) {
    o.detail = why;
    return o;
  }
  const auto m = read_json(env.run_dir("reverse") / "metrics.json");
  const double train_iou = m["final_train"]["iou"], test_iou = m["final_test"]["iou"],
               empty_iou = m["empty_baseline_test"]["iou"];
  o.pass = train_iou > 0.5 && test_iou > empty_iou;
  o.detail = "train IoU " + fmt(train_iou) + " (> 0.5); test IoU " + fmt(test_iou) + " > all-empty " +
             fmt(empty_iou);
  o.data = m;
  return o;
}

Outcome speedup(const Env& env) {
  Outcome o;
  std::string why;
  if (!ensure_dataset(env, why) || !ensure_training(env, "forward", {"--direction", "forward"}, why)) {
    o.detail = why;
    return o;
  }
  const auto dir = env.run_dir("bench");
  if (!fs::exists(dir / "bench.json")) {
    fs::create_directories(dir);
    const int rc = run_cli(env, "bench",
                           {"bench", "--checkpoint", (env.run_dir("forward") / "best.ckp").string(), "-d",
                            env.dataset().string(), "-n", "10", "--repeats", "5", "-o", (dir / "bench.json").string()});
    if (rc != 0) {
      o.detail = "bench exited " + std::to_string(rc);
      return o;
    }
  }
  const auto b = read_json(dir / "bench.json");
  const double s = b["speedup"];
  o.pass = s >= 100.0;
  o.detail = "oracle " + fmt(b["mean_oracle_ms"].get<double>(), 5) + " ms vs surrogate " +
             fmt(b["mean_surrogate_ms"].get<double>(), 4) + " ms on " + std::to_string(b["grids"].get<int>()) +
             " desk grids: " + fmt(s, 4) + "x (>= 100x). Reference: '" + b["reference_claim"].get<std::string>() +
             "' - " + b["caveat"].get<std::string>();
  o.data = b;
  return o;
}

Outcome shape_check(const Env& env) {
  Outcome o;
  std::string why;
  if (!ensure_dataset(env, why) || !ensure_training(env, "forward", {"--direction", "forward"}, why)) {
    o.detail = why;
    return o;
  }
  const UNet model = load_checkpoint(env.run_dir("forward") / "best.ckp");
  Config cfg;
  for (const char* k : {"domain.size_x", "domain.size_y", "domain.size_z"})
    cfg.set(k, std::to_string(2 * cfg.get_float(k)));
  const auto scene = generate_scene(domain_spec(cfg), scene_params(cfg), 0x2B16);
  const VoxelGrid big = voxelize(scene);
  const VoxelGrid y = model.predict(big);
  bool finite = true;
  for (float v : y.data()) finite = finite && std::isfinite(v);
  o.pass = y.dims() == big.dims() && y.channels() == 3 && finite;
  o.detail = "input " + std::to_string(big.nx()) + "x" + std::to_string(big.ny()) + "x" + std::to_string(big.nz()) +
             " (2x training) -> output " + std::to_string(y.nx()) + "x" + std::to_string(y.ny()) + "x" +
             std::to_string(y.nz()) + "x" + std::to_string(y.channels()) + (finite ? ", finite" : ", NON-FINITE");
  o.data = {{"input", big.dims()}, {"output", y.dims()}};
  return o;
}

Outcome service_contract(const Env& env) {
  Outcome o;
  std::string why;
  if (!ensure_dataset(env, why) || !ensure_training(env, "forward", {"--direction", "forward"}, why) ||
      !ensure_training(env, "reverse", {"--direction", "reverse"}, why)) {
    o.detail = why;
    return o;
  }
  Config cfg;
  cfg.set("service.port", "0");
  cfg.set("service.forward_checkpoint", (env.run_dir("forward") / "best.ckp").string());
  cfg.set("service.reverse_checkpoint", (env.run_dir("reverse") / "best.ckp").string());
  InferenceService svc(service_config(cfg));
  const int port = svc.start();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(300, 0);
  const auto fuzz = probe::fuzz(client, 1100, 2026);
  const UNet fwd = load_checkpoint(env.run_dir("forward") / "best.ckp");
  const UNet rev = load_checkpoint(env.run_dir("reverse") / "best.ckp");
  const auto ident = probe::identity(client, fwd, rev, 20, 2027);
  auto health = client.Get("/v1/health");
  svc.stop();

  o.pass = fuzz.cases >= 1000 && fuzz.ok == fuzz.cases && ident.cases == 80 && ident.ok == ident.cases && health &&
           health->status == 200;
  o.detail = std::to_string(fuzz.ok) + "/" + std::to_string(fuzz.cases) + " fuzzed payloads -> JSON 4xx; " +
             std::to_string(ident.ok) + "/" + std::to_string(ident.cases) +
             " endpoint outputs byte-identical to library calls (20 grids x 4 endpoints); server healthy after: " +
             (health && health->status == 200 ? "yes" : "no");
  for (const auto& f : fuzz.failures) o.detail += "\n      fuzz: " + f;
  for (const auto& f : ident.failures) o.detail += "\n      identity: " + f;
  o.data = {{"fuzz_cases", fuzz.cases}, {"fuzz_ok", fuzz.ok}, {"identity_cases", ident.cases}, {"identity_ok", ident.ok}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urbanflow acceptance suite"};
  Env env;
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Cache for the dataset, models and benchmark");
  app.add_option("--cli", env.cli, "Path to urbanflow_cli")->required()->check(CLI::ExistingFile);
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  env.work = fs::absolute(work);
  fs::create_directories(env.work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle validity", oracle_validity},
      {"autodiff correctness", autodiff},
      {"dataset split 3500 -> 3325/175", dataset_split},
      {"forward training", [&] { return forward_training(env); }},
      {"reverse training", [&] { return reverse_training(env); }},
      {"speedup", [&] { return speedup(env); }},
      {"2x generalization shape check", [&] { return shape_check(env); }},
      {"service contract", [&] { return service_contract(env); }},
  };

  json report = json::array();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    std::cerr << "[" << n << "] " << criteria[i].first << " ..." << std::endl;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << criteria[i].first << ": " << o.detail << std::endl;
    report.push_back({{"criterion", n}, {"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail},
                      {"seconds", since(t0)}, {"data", o.data}});
  }
  write_file_atomic(env.work / "acceptance_report.json", report.dump(2));
  std::cout << (failed ? std::to_string(failed) + " criteria FAILED" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
