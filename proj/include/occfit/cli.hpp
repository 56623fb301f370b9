#pragma once

#include "occfit/fit.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace occ {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitVerification = 4;

/// `occfit synth|fit|render|eval|gradcheck|flow-check`. Returns the exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

/// Field with occupied voxels at psi = 1 - 1e-6 and one-hot semantic logits (+/- 10), free voxels
/// at psi = 1e-6. Used to render ground-truth scenes.
VoxelField field_from_labels(const OccupancyLabels& labels);

struct RenderedImage {
  std::string camera;
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<double> opacity;
  /// Argmax class per pixel, -1 where the opacity stays below the threshold.
  std::vector<int> semantics;
};

/// Renders every pixel center of `cam` (pixel (col, row) at u = col, v = row) through the field,
/// with rays mapped into the grid frame by the camera's ego pose.
RenderedImage render_camera(const VoxelField& field, const CameraFrame& cam, const EgoPoses& ego_poses,
                            const SamplingConfig& sampling, std::uint64_t seed, double opacity_threshold,
                            int threads);

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report,
                       std::span<const std::string> class_names, std::span<const std::pair<std::string, std::string>> extra);
void print_metrics_table(std::ostream& out, const MetricsReport& report, std::span<const std::string> class_names);

}  // namespace occ
