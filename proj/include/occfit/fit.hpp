#pragma once

#include "occfit/camera.hpp"
#include "occfit/flow.hpp"
#include "occfit/grid.hpp"
#include "occfit/supervise2d.hpp"
#include "occfit/supervise3d.hpp"
#include "occfit/temporal.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace occ {

enum class FitMode { k2d, k3d, k2d3d };

std::string to_string(FitMode mode);
/// Accepts "2d", "3d", "2d+3d".
FitMode parse_fit_mode(const std::string& text);

struct AdamConfig {
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Cosine decay of the step size to zero over the run.
  bool cosine_decay = false;
};

struct FitConfig {
  int steps = 300;
  AdamConfig adam;
  FitMode mode = FitMode::k2d;
  LossCoefficients coeffs;
  /// Scale of the 3D loss in the combined objective.
  double weight_3d = 1.0;
  std::uint64_t seed = 0;
  double tau = 0.5;
  double density_prior = VoxelField::kDefaultDensityPrior;

  SamplingConfig sampling;
  std::size_t rays_per_step = 4096;
  int threads = 1;

  /// Horizon 0 disables temporal rendering.
  TemporalConfig temporal{.horizon = 0, .dynamic_classes = {}, .dynamic_filter = true, .disocclusion_mask = true};
  bool class_weighting = true;
  bool flow = false;

  double divergence_limit = 1e6;

  void validate(int num_classes) const;
};

/// Everything a fit consumes, already in the grid frame.
struct FitData {
  GridSpec spec;
  std::vector<Ray> rays;
  /// Rays from held-out cameras at t = 0, unit weight.
  std::vector<Ray> heldout_rays;
  std::optional<VoxelTargets> targets;
  std::optional<FlowTable> flow;
  ClassWeights class_weights;
};

/// Builds training rays from the non-held-out cameras: points beyond the horizon are dropped, the
/// dynamic ray filter runs when enabled and flow is off, class weights come from the surviving
/// points (unit weights when weighting is off).
FitData assemble_fit_data(const GridSpec& spec, const CameraRig& rig, std::span<const LabeledPoint> points,
                          const FitConfig& cfg, const OccupancyLabels* labels = nullptr,
                          std::span<const BoxTrack> tracks = {});

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double depth_term = 0.0;
  double semantic_term = 0.0;
  double loss_3d = 0.0;
};

struct FitResult {
  VoxelField field;
  std::vector<StepRecord> history;
};

/// Adam on density and semantic logits. Deterministic given the config; throws DivergenceError
/// when the step loss is non-finite or exceeds the divergence limit.
FitResult fit(VoxelField field, const FitData& data, const FitConfig& cfg,
              const std::function<void(const StepRecord&)>& on_step = {});

/// The fit objective at a fixed step, over every training ray, plus the 3D loss when targets are
/// present. Used to compare fields trained under different modes on equal terms.
double combined_objective(const VoxelField& field, const FitData& data, const FitConfig& cfg);

struct MetricsReport {
  /// NaN for classes absent from both ground truth and prediction.
  std::vector<double> class_iou;
  double miou = 0.0;
  double miou_static = 0.0;
  double miou_dynamic = 0.0;
  /// NaN when no held-out rays were evaluated.
  double heldout_depth_mae = 0.0;
  std::size_t heldout_rays = 0;
};

MetricsReport evaluate(const VoxelField& field, const OccupancyLabels& gt, double tau,
                       std::span<const int> dynamic_classes);

/// Mean |rendered depth - gt depth| over the rays.
double depth_mae(const VoxelField& field, std::span<const Ray> rays, const SamplingConfig& sampling,
                 std::uint64_t seed, int threads);

}  // namespace occ
