#include "urbanflow/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "urbanflow/checkpoint.hpp"
#include "urbanflow/errors.hpp"
#include "urbanflow/field_ops.hpp"
#include "urbanflow/voxelizer.hpp"

namespace urbanflow {

namespace fs = std::filesystem;

void DatasetSpec::validate() const {
  if (count < 1) throw ValidationError("dataset.count must be >= 1");
  if (retry_budget < 0) throw ValidationError("dataset.retry_budget must be >= 0");
  if (workers < 1) throw ValidationError("dataset.workers must be >= 1");
  domain.validate();
  scene.validate();
  flow.validate();
}

nlohmann::json to_json(const SampleMeta& m) {
  return {{"id", m.id},     {"seed", m.seed},         {"attempt", m.attempt},
          {"steps", m.steps}, {"residual", m.residual}, {"converged", m.converged}};
}

SampleMeta sample_meta_from_json(const nlohmann::json& j) {
  SampleMeta m;
  m.id = j.at("id").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.attempt = j.value("attempt", 0);
  m.steps = j.at("steps").get<int>();
  m.residual = j.at("residual").get<double>();
  m.converged = j.at("converged").get<bool>();
  return m;
}

nlohmann::json to_json(const DatasetManifest& m) {
  return {{"format", "urbanflow-dataset-1"},
          {"count", m.ids.size()},
          {"ids", m.ids},
          {"dims", m.dims},
          {"resolution", m.resolution},
          {"velocity_scale_mps", m.velocity_scale_mps},
          {"retries", m.retries},
          {"spec", m.spec}};
}

DatasetManifest dataset_manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.ids = j.at("ids").get<std::vector<std::string>>();
    m.dims = j.at("dims").get<Dims3>();
    m.resolution = j.at("resolution").get<double>();
    m.velocity_scale_mps = j.at("velocity_scale_mps").get<double>();
    m.retries = j.value("retries", 0);
    m.spec = j.value("spec", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("dataset manifest: ") + e.what());
  }
  return m;
}

namespace {

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

std::string sample_id(int i, int count) {
  const int width = std::max<int>(5, static_cast<int>(std::to_string(count - 1).size()));
  std::string n = std::to_string(i);
  return "s" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(n.size(), width), '0') + n;
}

nlohmann::json spec_json(const DatasetSpec& s) {
  FlowConfig flow = s.flow;
  flow.threads = 1;  // worker count does not change results
  return {{"count", s.count},         {"domain", to_json(s.domain)},
          {"scene", to_json(s.scene)}, {"flow", to_json(flow)},
          {"seed", s.seed},            {"retry_budget", s.retry_budget}};
}

fs::path occ_path(const fs::path& dir, const std::string& id) { return dir / "samples" / (id + ".occ.vxg"); }
fs::path vel_path(const fs::path& dir, const std::string& id) { return dir / "samples" / (id + ".vel.vxg"); }
fs::path meta_path(const fs::path& dir, const std::string& id) { return dir / "samples" / (id + ".meta.json"); }

}  // namespace

DatasetManifest build_dataset(const fs::path& dir, const DatasetSpec& spec,
                              const std::function<void(const SampleMeta&)>& progress) {
  spec.validate();
  fs::create_directories(dir / "samples");
  const nlohmann::json sj = spec_json(spec);
  const std::string tag = content_digest(sj.dump());

  std::vector<SampleMeta> metas(static_cast<std::size_t>(spec.count));
  std::atomic<int> retries{0};
  std::atomic<bool> exhausted{false};
  std::atomic<int> failed_solves{0};
  std::mutex mu;
  std::string first_error;

  auto work = [&](int i) {
    const std::string id = sample_id(i, spec.count);
    const std::uint64_t base_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(i));
    // reuse a finished sample from an earlier, interrupted build
    if (fs::exists(meta_path(dir, id)) && fs::exists(occ_path(dir, id)) &&
        fs::exists(vel_path(dir, id))) {
      try {
        const auto j = read_json(meta_path(dir, id));
        if (j.value("build", "") == tag && j.at("converged").get<bool>()) {
          metas[i] = sample_meta_from_json(j);
          retries += metas[i].attempt;
          std::lock_guard lock(mu);
          if (progress) progress(metas[i]);
          return;
        }
      } catch (const std::exception&) {
        // fall through and rebuild
      }
    }
    FlowConfig flow = spec.flow;
    if (spec.workers > 1) flow.threads = 1;
    for (int attempt = 0;; ++attempt) {
      if (exhausted) return;
      const std::uint64_t seed =
          attempt == 0 ? base_seed : mix_seed(base_seed, static_cast<std::uint64_t>(attempt));
      const Scene scene = generate_scene(spec.domain, spec.scene, seed);
      const VoxelGrid occ = voxelize(scene);
      SampleMeta m{id, seed, attempt, 0, 0.0, false};
      VoxelGrid vel;
      try {
        auto sol = solve_steady(occ, flow);
        m.steps = sol.steps;
        m.residual = sol.residual;
        m.converged = sol.converged;
        vel = std::move(sol.velocity);
      } catch (const SolverDiverged& e) {
        m.steps = e.step();
        m.residual = std::numeric_limits<double>::infinity();
      }
      if (!m.converged) {
        ++failed_solves;
        if (++retries > spec.retry_budget) {
          exhausted = true;
          return;
        }
        continue;
      }
      const float inv = static_cast<float>(1.0 / spec.flow.reference_speed_mps);
      for (auto& v : vel.data()) v *= inv;
      write_file_atomic(occ_path(dir, id), encode_vxg(occ));
      write_file_atomic(vel_path(dir, id), encode_vxg(vel));
      auto j = to_json(m);
      j["build"] = tag;
      j["scene"] = to_json(scene);
      write_json(meta_path(dir, id), j);  // last: its presence marks completion
      metas[i] = m;
      std::lock_guard lock(mu);
      if (progress) progress(m);
      return;
    }
  };

#pragma omp parallel for schedule(dynamic, 1) num_threads(spec.workers) if (spec.workers > 1)
  for (int i = 0; i < spec.count; ++i) {
    try {
      work(i);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      if (first_error.empty()) first_error = e.what();
      exhausted = true;
    }
  }
  if (!first_error.empty()) throw std::runtime_error("dataset build failed: " + first_error);
  if (exhausted) {
    int done = 0;
    double worst = 0.0;
    for (const auto& m : metas)
      if (m.converged) {
        ++done;
        worst = std::max(worst, m.residual);
      }
    std::ostringstream os;
    os << "dataset: retry budget of " << spec.retry_budget << " exhausted; " << done << " of "
       << spec.count << " samples converged, " << failed_solves.load()
       << " solves did not converge within " << spec.flow.max_steps << " steps (tol "
       << spec.flow.convergence_tol << ")";
    throw NotConverged(os.str());
  }

  DatasetManifest man;
  for (const auto& m : metas) man.ids.push_back(m.id);
  man.dims = spec.domain.grid_dims();
  man.resolution = spec.domain.resolution;
  man.velocity_scale_mps = spec.flow.reference_speed_mps;
  man.spec = sj;
  man.retries = retries;
  write_json(dir / "manifest.json", to_json(man));
  return man;
}

DatasetManifest load_manifest(const fs::path& dir) {
  return dataset_manifest_from_json(read_json(dir / "manifest.json"));
}

SplitManifest split(const std::vector<std::string>& ids, double ratio, std::uint64_t seed) {
  if (ids.empty()) throw ValidationError("split: dataset is empty");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must be in (0, 1)");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  std::mt19937_64 rng(mix_seed(seed, 0x5B17));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, i - 1))]);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * order.size()));
  // keep both sides non-empty whenever there are two ids to share
  if (order.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
  SplitManifest s;
  s.ratio = ratio;
  s.seed = seed;
  s.train_ids.assign(order.begin(), order.begin() + n_train);
  s.test_ids.assign(order.begin() + n_train, order.end());
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

nlohmann::json to_json(const SplitManifest& s) {
  return {{"ratio", s.ratio}, {"seed", s.seed}, {"train_ids", s.train_ids}, {"test_ids", s.test_ids}};
}

SplitManifest split_from_json(const nlohmann::json& j) {
  SplitManifest s;
  try {
    s.ratio = j.at("ratio").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("split manifest: ") + e.what());
  }
  return s;
}

void write_split(const fs::path& dir, const SplitManifest& s) { write_json(dir / "split.json", to_json(s)); }

SplitManifest read_split(const fs::path& dir) { return split_from_json(read_json(dir / "split.json")); }

Sample load_sample(const fs::path& dir, const std::string& id) {
  Sample s{id, read_vxg(occ_path(dir, id)), read_vxg(vel_path(dir, id))};
  if (s.occupancy.channels() != 1)
    throw IngestionError(occ_path(dir, id).string() + ": occupancy must have 1 channel");
  if (s.velocity.channels() != 3)
    throw IngestionError(vel_path(dir, id).string() + ": velocity must have 3 channels");
  if (!s.occupancy.same_geometry(s.velocity))
    throw IngestionError(vel_path(dir, id).string() + ": geometry differs from its occupancy grid");
  return s;
}

std::vector<Sample> load_samples(const fs::path& dir, const std::vector<std::string>& ids) {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(load_sample(dir, id));
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0xE90C0000ull + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, i - 1))]);
  return order;
}

namespace {

void copy_grid(const VoxelGrid& g, float* dst, bool mirror, bool flip_channel1) {
  const std::int64_t nx = g.nx(), ny = g.ny(), nz = g.nz();
  for (int c = 0; c < g.channels(); ++c) {
    const float sign = (mirror && flip_channel1 && c == 1) ? -1.0f : 1.0f;
    for (std::int64_t z = 0; z < nz; ++z)
      for (std::int64_t y = 0; y < ny; ++y) {
        const std::int64_t sy = mirror ? ny - 1 - y : y;
        const float* src = &g.data()[g.index(0, sy, z, c)];
        float* out = dst + ((c * nz + z) * ny + y) * nx;
        for (std::int64_t x = 0; x < nx; ++x) out[x] = sign * src[x];
      }
  }
}

}  // namespace

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                 const BatchOptions& opt, std::uint64_t seed, int epoch) {
  if (idx.empty()) throw ValidationError("batch must contain at least one sample");
  const auto& first = samples.at(idx[0]).occupancy;
  const std::int64_t b = static_cast<std::int64_t>(idx.size());
  const std::int64_t vox = first.voxel_count();
  const bool fwd = opt.direction == Direction::Forward;
  const int cin = fwd ? 1 : 3, cout = fwd ? 3 : 1;
  Batch out;
  out.input = Tensor({b, cin, first.nz(), first.ny(), first.nx()});
  out.target = Tensor({b, cout, first.nz(), first.ny(), first.nx()});
  for (std::int64_t k = 0; k < b; ++k) {
    const Sample& s = samples.at(idx[static_cast<std::size_t>(k)]);
    if (s.occupancy.dims() != first.dims())
      throw ShapeError("batch mixes grid sizes (" + s.id + ")");
    out.ids.push_back(s.id);
    const bool mirror =
        opt.mirror_y && (mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)),
                                  idx[static_cast<std::size_t>(k)]) & 1u);
    float* in = out.input.data() + k * cin * vox;
    float* tg = out.target.data() + k * cout * vox;
    if (fwd) {
      copy_grid(s.occupancy, in, mirror, false);
      copy_grid(s.velocity, tg, mirror, true);
    } else {
      if (opt.mask_input) {
        const VoxelGrid mask = threshold_low_wind(magnitude(s.velocity), opt.mask_cutoff, s.occupancy);
        copy_grid(mask_to_target_field(mask, 1.0), in, mirror, true);
      } else {
        copy_grid(s.velocity, in, mirror, true);
      }
      copy_grid(s.occupancy, tg, mirror, false);
    }
  }
  return out;
}

void iterate_batches(const std::vector<Sample>& samples, int batch_size, std::uint64_t seed,
                     int epoch, const BatchOptions& opt, const std::function<void(const Batch&)>& fn) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  const auto order = epoch_order(samples.size(), seed, epoch);
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    fn(make_batch(samples, {order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(end)},
                  opt, seed, epoch));
  }
}

}  // namespace urbanflow
