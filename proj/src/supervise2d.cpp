#include "occfit/supervise2d.hpp"

#include "occfit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace occ {

ClassWeights compute_class_weights(std::span<const std::uint64_t> counts) {
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (total == 0) {
    throw InputError("class weights: all class counts are zero");
  }
  ClassWeights cw;
  cw.counts.assign(counts.begin(), counts.end());
  cw.weights.resize(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    cw.weights[c] = counts[c] == 0 ? 0.0
                                   : std::log(static_cast<double>(total) / static_cast<double>(counts[c]));
  }
  return cw;
}

std::vector<std::uint64_t> count_classes(std::span<const LabeledPoint> points, int num_classes) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& p : points) {
    if (p.class_id >= 0 && p.class_id < num_classes) {
      ++counts[static_cast<std::size_t>(p.class_id)];
    }
  }
  return counts;
}

RayLoss ray_loss(const RenderOutput& out, const Ray& ray, const LossCoefficients& coeffs) {
  RayLoss r;
  const std::size_t c = out.semantics.size();
  const double residual = out.depth - ray.gt_depth;
  r.depth_term = ray.weight * coeffs.depth * residual * residual;
  r.d_depth = ray.weight * coeffs.depth * 2.0 * residual;

  const double m = *std::max_element(out.semantics.begin(), out.semantics.end());
  double z = 0.0;
  for (double s : out.semantics) z += std::exp(s - m);
  const double lse = m + std::log(z);
  const auto gt = static_cast<std::size_t>(ray.gt_class);
  r.semantic_term = ray.weight * coeffs.semantic * (lse - out.semantics[gt]);
  r.d_semantics.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    const double p = std::exp(out.semantics[j] - lse);
    r.d_semantics[j] = ray.weight * coeffs.semantic * (p - (j == gt ? 1.0 : 0.0));
  }
  r.loss = r.depth_term + r.semantic_term;
  return r;
}

StaticFields::StaticFields(const VoxelField& field) : field_(field), volume_(DensityVolume::from_field(field)) {}

const DensityVolume& StaticFields::volume(int) { return volume_; }

void StaticFields::backpropagate(int, const VolumeGrad& grad, FieldGrad& out) const {
  chain_to_logits(field_, grad, out);
}

std::vector<std::size_t> select_batch(std::size_t pool_size, std::size_t rays_per_step, std::uint64_t seed,
                                      std::uint64_t step) {
  std::vector<std::size_t> all(pool_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (pool_size <= rays_per_step) {
    return all;
  }
  std::vector<std::size_t> picked;
  picked.reserve(rays_per_step);
  std::mt19937_64 gen(derive_seed(seed, step, 0x5eed));
  std::sample(all.begin(), all.end(), std::back_inserter(picked), rays_per_step, gen);
  return picked;
}

RayRender render_ray(const Ray& ray, std::size_t ray_id, const DensityVolume& volume, const SamplingConfig& cfg,
                     std::uint64_t stream_seed) {
  RayRender rr;
  CounterRng rng(stream_seed, ray_id);
  auto samples = sample_ray(ray.origin, ray.direction, volume, cfg, rng);
  if (!samples) {
    rr.output.semantics.assign(static_cast<std::size_t>(volume.spec.num_classes), 0.0);
    return rr;
  }
  rr.hit = true;
  rr.samples = std::move(*samples);
  rr.output = render_forward(rr.samples);
  return rr;
}

namespace {

struct ChunkResult {
  explicit ChunkResult(const GridSpec& spec) : grad(spec) {}
  double loss = 0.0;
  double depth_term = 0.0;
  double semantic_term = 0.0;
  VolumeGrad grad;
};

constexpr std::size_t kMaxChunks = 64;
constexpr std::size_t kMinChunkRays = 128;

}  // namespace

BatchLoss batch_loss(std::span<const Ray> rays, std::span<const std::size_t> batch, TimestepFields& fields,
                     const GridSpec& spec, const BatchOptions& opts) {
  BatchLoss result(spec);
  result.rays = batch.size();
  if (batch.empty()) {
    return result;
  }

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t id : batch) {
    groups[rays[id].timestep].push_back(id);
  }
  const std::uint64_t stream_seed = derive_seed(opts.seed, opts.step, 0x7a3);

  for (const auto& [timestep, ids] : groups) {
    const DensityVolume& volume = fields.volume(timestep);
    const std::size_t n_chunks =
        std::clamp<std::size_t>((ids.size() + kMinChunkRays - 1) / kMinChunkRays, 1, kMaxChunks);
    const std::size_t chunk_size = (ids.size() + n_chunks - 1) / n_chunks;
    std::vector<ChunkResult> chunks(n_chunks, ChunkResult(spec));

    parallel_for(n_chunks, opts.threads, [&](std::size_t chunk) {
      ChunkResult& acc = chunks[chunk];
      const std::size_t begin = chunk * chunk_size;
      const std::size_t end = std::min(ids.size(), begin + chunk_size);
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t id = ids[i];
        const Ray& ray = rays[id];
        RayRender rr = render_ray(ray, id, volume, opts.sampling, stream_seed);
        const RayLoss rl = ray_loss(rr.output, ray, opts.coeffs);
        acc.loss += rl.loss;
        acc.depth_term += rl.depth_term;
        acc.semantic_term += rl.semantic_term;
        if (rr.hit) {
          render_backward(rr.samples, rl.d_depth, rl.d_semantics, acc.grad);
        }
      }
    });

    VolumeGrad group_grad(spec);
    for (const auto& chunk : chunks) {
      result.loss += chunk.loss;
      result.depth_term += chunk.depth_term;
      result.semantic_term += chunk.semantic_term;
      group_grad.add(chunk.grad);
    }
    fields.backpropagate(timestep, group_grad, result.grad);
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  result.loss *= inv;
  result.depth_term *= inv;
  result.semantic_term *= inv;
  result.grad.scale(inv);
  return result;
}

BatchLoss batch_loss(std::span<const Ray> rays, const VoxelField& field, const BatchOptions& opts) {
  StaticFields fields(field);
  const auto batch = select_batch(rays.size(), opts.rays_per_step, opts.seed, opts.step);
  return batch_loss(rays, batch, fields, field.spec(), opts);
}

}  // namespace occ
