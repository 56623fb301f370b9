#include "occfit/flow.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace occ {

bool BoxTrack::contains(const Vec3& p, int timestep) const {
  const auto it = poses.find(timestep);
  if (it == poses.end()) return false;
  const Vec3 local = transform_point(rigid_inverse(it->second), p);
  return (local.cwiseAbs().array() < 0.5 * extent.array()).all();
}

std::vector<BoxTrack> load_tracks_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("box_id,class,t,tx,ty,tz,qw,qx,qy,qz,l,w,h", 0) != 0) {
    throw InputError(path.string() + ":1: expected header 'box_id,class,t,tx,ty,tz,qw,qx,qy,qz,l,w,h'");
  }
  std::map<int, BoxTrack> by_id;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    int id = 0, cls = 0, t = 0;
    double v[10];
    if (!(ss >> id >> cls >> t)) throw InputError(where + "malformed box row");
    for (double& x : v) {
      if (!(ss >> x)) throw InputError(where + "malformed box row");
    }
    Eigen::Quaterniond q(v[3], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-6) throw InputError(where + "quaternion is not unit length");
    q.normalize();
    const Vec3 extent(v[7], v[8], v[9]);
    if ((extent.array() <= 0.0).any()) throw InputError(where + "box extent must be positive");

    auto [it, inserted] = by_id.try_emplace(id);
    BoxTrack& track = it->second;
    if (inserted) {
      track.box_id = id;
      track.class_id = cls;
      track.extent = extent;
    } else if (track.class_id != cls || (track.extent - extent).cwiseAbs().maxCoeff() > 1e-9) {
      throw InputError(where + "box class/extent changes between rows");
    }
    if (!track.poses.emplace(t, make_rigid(q.toRotationMatrix(), Vec3(v[0], v[1], v[2]))).second) {
      throw InputError(where + "duplicate timestep for box " + std::to_string(id));
    }
  }
  std::vector<BoxTrack> tracks;
  for (auto& [id, track] : by_id) tracks.push_back(std::move(track));
  return tracks;
}

void save_tracks_csv(const std::filesystem::path& path, std::span<const BoxTrack> tracks) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "box_id,class,t,tx,ty,tz,qw,qx,qy,qz,l,w,h\n" << std::setprecision(17);
  for (const auto& track : tracks) {
    for (const auto& [t, pose] : track.poses) {
      const Eigen::Quaterniond q(Mat3(pose.topLeftCorner<3, 3>()));
      const Vec3 c = pose.topRightCorner<3, 1>();
      out << track.box_id << ',' << track.class_id << ',' << t << ',' << c.x() << ',' << c.y() << ',' << c.z()
          << ',' << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << track.extent.x() << ','
          << track.extent.y() << ',' << track.extent.z() << '\n';
    }
  }
}

FlowTable build_flow_table(std::span<const BoxTrack> tracks, const GridSpec& spec, std::span<const int> timesteps) {
  FlowTable table;
  table.spec = spec;
  table.timesteps.assign(timesteps.begin(), timesteps.end());

  // owner[v] = index of the box claiming voxel v, by nearest t = 0 center.
  std::vector<std::int32_t> owner(spec.voxel_count(), -1);
  std::vector<double> owner_dist(spec.voxel_count(), 0.0);

  for (std::size_t b = 0; b < tracks.size(); ++b) {
    const BoxTrack& track = tracks[b];
    BoxFlow flow;
    flow.box_id = track.box_id;
    flow.class_id = track.class_id;
    const auto pose0 = track.poses.find(0);
    if (pose0 != track.poses.end()) {
      flow.center0 = pose0->second.topRightCorner<3, 1>();
      const Mat4 inv0 = rigid_inverse(pose0->second);
      for (int t : timesteps) {
        const auto pose_t = track.poses.find(t);
        if (pose_t == track.poses.end()) continue;
        flow.transforms[t] = t == 0 ? Mat4::Identity() : Mat4(pose_t->second * inv0);
      }
      // Candidate voxels: the axis-aligned bounds of the oriented box.
      const Mat3 r = pose0->second.topLeftCorner<3, 3>();
      const Vec3 half = r.cwiseAbs() * (0.5 * track.extent);
      std::array<int, 3> lo{}, hi{};
      for (int axis = 0; axis < 3; ++axis) {
        lo[axis] = std::max(0, static_cast<int>(std::floor((flow.center0[axis] - half[axis] - spec.origin[axis]) /
                                                           spec.voxel_size)) - 1);
        hi[axis] = std::min(spec.dims[axis] - 1,
                            static_cast<int>(std::floor((flow.center0[axis] + half[axis] - spec.origin[axis]) /
                                                        spec.voxel_size)) + 1);
      }
      for (int z = lo[2]; z <= hi[2]; ++z) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
          for (int x = lo[0]; x <= hi[0]; ++x) {
            const Vec3 center = spec.voxel_center(x, y, z);
            if (!track.contains(center, 0)) continue;
            const std::size_t v = spec.index(x, y, z);
            const double d = (center - flow.center0).norm();
            if (owner[v] < 0 || d < owner_dist[v]) {
              owner[v] = static_cast<std::int32_t>(b);
              owner_dist[v] = d;
            }
          }
        }
      }
    }
    table.boxes.push_back(std::move(flow));
  }
  for (std::size_t v = 0; v < owner.size(); ++v) {
    if (owner[v] >= 0) {
      table.boxes[static_cast<std::size_t>(owner[v])].members.push_back(static_cast<std::uint32_t>(v));
    }
  }
  return table;
}

IdwStencil idw_stencil(const GridSpec& spec, const Vec3& position) {
  IdwStencil s;
  std::array<int, 3> base{};
  for (int axis = 0; axis < 3; ++axis) {
    base[axis] = static_cast<int>(std::floor((position[axis] - spec.origin[axis]) / spec.voxel_size - 0.5));
  }
  std::array<double, 8> dist{};
  int singular = -1;
  for (int corner = 0; corner < 8; ++corner) {
    const int x = base[0] + (corner & 1);
    const int y = base[1] + ((corner >> 1) & 1);
    const int z = base[2] + ((corner >> 2) & 1);
    const auto k = static_cast<std::size_t>(corner);
    s.valid[k] = spec.in_bounds(x, y, z);
    s.targets[k] = s.valid[k] ? static_cast<std::uint32_t>(spec.index(x, y, z)) : 0;
    dist[k] = (position - spec.voxel_center(x, y, z)).norm();
    if (singular < 0 && dist[k] < 1e-9 * spec.voxel_size) singular = corner;
  }
  if (singular >= 0) {
    s.weights.fill(0.0);
    s.weights[static_cast<std::size_t>(singular)] = 1.0;
    return s;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < 8; ++k) total += 1.0 / dist[k];
  for (std::size_t k = 0; k < 8; ++k) s.weights[k] = (1.0 / dist[k]) / total;
  return s;
}

std::vector<std::vector<std::uint32_t>> select_flow_sources(const VoxelField& field, const FlowTable& table,
                                                            double tau) {
  std::vector<std::vector<std::uint32_t>> sources(table.boxes.size());
  for (std::size_t b = 0; b < table.boxes.size(); ++b) {
    const BoxFlow& box = table.boxes[b];
    for (std::uint32_t v : box.members) {
      if (field.density(v) >= tau && argmax_class(field.semantics_at(v)) == box.class_id) {
        sources[b].push_back(v);
      }
    }
  }
  return sources;
}

FlowedVolume apply_flow(const DensityVolume& base, const FlowTable& table,
                        const std::vector<std::vector<std::uint32_t>>& sources, int timestep) {
  if (std::find(table.timesteps.begin(), table.timesteps.end(), timestep) == table.timesteps.end()) {
    throw InputError("flow requested for timestep " + std::to_string(timestep) + " outside the flow table");
  }
  const GridSpec& spec = base.spec;
  const auto c = static_cast<std::size_t>(spec.num_classes);
  FlowedVolume out;
  out.volume = base;
  out.slot.assign(spec.voxel_count(), -1);

  auto touch = [&](std::uint32_t v) -> FlowedVolume::Provenance& {
    if (out.slot[v] < 0) {
      out.slot[v] = static_cast<std::int32_t>(out.provenance.size());
      out.provenance.emplace_back();
    }
    return out.provenance[static_cast<std::size_t>(out.slot[v])];
  };

  struct Move {
    std::uint32_t source;
    const Mat4* transform;
  };
  std::vector<Move> moves;
  for (std::size_t b = 0; b < table.boxes.size() && b < sources.size(); ++b) {
    const BoxFlow& box = table.boxes[b];
    const auto it = box.transforms.find(timestep);
    for (std::uint32_t v : sources[b]) {
      out.volume.sigma[v] = 0.0;
      touch(v).sigma_self = 0.0;
      if (it != box.transforms.end()) moves.push_back({v, &it->second});
    }
  }
  std::sort(moves.begin(), moves.end(), [](const Move& a, const Move& b) { return a.source < b.source; });

  for (const Move& m : moves) {
    out.moved.push_back(m.source);
    const Vec3 target = transform_point(*m.transform, spec.voxel_center(static_cast<std::size_t>(m.source)));
    const IdwStencil stencil = idw_stencil(spec, target);
    const double src_sigma = base.sigma[m.source];
    const double* src_sem = base.semantics.data() + static_cast<std::size_t>(m.source) * c;
    for (std::size_t k = 0; k < 8; ++k) {
      const double a = stencil.weights[k];
      if (!stencil.valid[k] || a == 0.0) continue;
      const std::uint32_t d = stencil.targets[k];
      out.volume.sigma[d] = a * src_sigma + (1.0 - a) * out.volume.sigma[d];
      double* dst_sem = out.volume.semantics.data() + static_cast<std::size_t>(d) * c;
      for (std::size_t j = 0; j < c; ++j) dst_sem[j] = a * src_sem[j] + (1.0 - a) * dst_sem[j];

      FlowedVolume::Provenance& p = touch(d);
      p.sigma_self *= 1.0 - a;
      p.semantics_self *= 1.0 - a;
      for (auto& term : p.terms) term.second *= 1.0 - a;
      p.terms.emplace_back(m.source, a);
    }
  }
  return out;
}

FlowedVolume apply_flow(const VoxelField& field, const FlowTable& table, double tau, int timestep) {
  return apply_flow(DensityVolume::from_field(field), table, select_flow_sources(field, table, tau), timestep);
}

void FlowedVolume::backpropagate(const VolumeGrad& grad, VolumeGrad& base) const {
  const std::size_t n = slot.size();
  const std::size_t c = n == 0 ? 0 : grad.semantics.size() / n;
  for (std::size_t v = 0; v < n; ++v) {
    const double gs = grad.sigma[v];
    const double* gsem = grad.semantics.data() + v * c;
    double* bsem = base.semantics.data() + v * c;
    if (slot[v] < 0) {
      base.sigma[v] += gs;
      for (std::size_t j = 0; j < c; ++j) bsem[j] += gsem[j];
      continue;
    }
    const Provenance& p = provenance[static_cast<std::size_t>(slot[v])];
    base.sigma[v] += p.sigma_self * gs;
    for (std::size_t j = 0; j < c; ++j) bsem[j] += p.semantics_self * gsem[j];
    for (const auto& [src, coef] : p.terms) {
      base.sigma[src] += coef * gs;
      double* ssem = base.semantics.data() + static_cast<std::size_t>(src) * c;
      for (std::size_t j = 0; j < c; ++j) ssem[j] += coef * gsem[j];
    }
  }
}

FlowFields::FlowFields(const VoxelField& field, const FlowTable& table, double tau, const TemporalConfig& cfg)
    : field_(field),
      table_(table),
      sources_(select_flow_sources(field, table, tau)),
      mask_(field.spec().voxel_count(), 0),
      current_(DensityVolume::from_field(field)) {
  if (cfg.disocclusion_mask) {
    mask_ = dynamic_decoded_mask(field, tau, cfg.dynamic_classes);
    for (const auto& src : sources_) {
      for (std::uint32_t v : src) mask_[v] = 0;
    }
  }
  temporal_base_ = current_;
  for (std::size_t v = 0; v < mask_.size(); ++v) {
    if (mask_[v]) temporal_base_.sigma[v] = 0.0;
  }
}

const DensityVolume& FlowFields::volume(int timestep) {
  if (timestep == 0) return current_;
  auto it = flowed_.find(timestep);
  if (it == flowed_.end()) {
    it = flowed_.emplace(timestep, apply_flow(temporal_base_, table_, sources_, timestep)).first;
  }
  return it->second.volume;
}

void FlowFields::backpropagate(int timestep, const VolumeGrad& grad, FieldGrad& out) const {
  if (timestep == 0) {
    chain_to_logits(field_, grad, out);
    return;
  }
  const auto it = flowed_.find(timestep);
  if (it == flowed_.end()) {
    throw std::logic_error("flow backpropagate before volume was built");
  }
  VolumeGrad base(field_.spec());
  it->second.backpropagate(grad, base);
  for (std::size_t v = 0; v < mask_.size(); ++v) {
    if (mask_[v]) base.sigma[v] = 0.0;
  }
  chain_to_logits(field_, base, out);
}

std::size_t FlowFields::moved_count() const {
  std::size_t n = 0;
  for (const auto& s : sources_) n += s.size();
  return n;
}

void save_flow_table(const std::filesystem::path& path, const FlowTable& table, std::uint64_t scene_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  bin::put_magic(out, "FLOW");
  bin::put<std::uint16_t>(out, kFlowFormatVersion);
  bin::put<std::uint64_t>(out, scene_hash);
  bin::write_spec(out, table.spec);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(table.timesteps.size()));
  for (int t : table.timesteps) bin::put<std::int32_t>(out, t);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(table.boxes.size()));
  for (const auto& box : table.boxes) {
    bin::put<std::int32_t>(out, box.box_id);
    bin::put<std::int32_t>(out, box.class_id);
    for (int axis = 0; axis < 3; ++axis) bin::put<double>(out, box.center0[axis]);
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(box.members.size()));
    for (std::uint32_t v : box.members) bin::put<std::uint32_t>(out, v);
    bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(box.transforms.size()));
    for (const auto& [t, m] : box.transforms) {
      bin::put<std::int32_t>(out, t);
      for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col) bin::put<double>(out, m(r, col));
    }
  }
}

std::optional<FlowTable> load_flow_table(const std::filesystem::path& path, std::uint64_t scene_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  bin::expect_magic(in, "FLOW");
  if (bin::get<std::uint16_t>(in, "version") != kFlowFormatVersion) return std::nullopt;
  if (bin::get<std::uint64_t>(in, "scene hash") != scene_hash) return std::nullopt;
  FlowTable table;
  table.spec = bin::read_spec(in);
  const auto n_t = bin::get<std::uint32_t>(in, "timestep count");
  for (std::uint32_t i = 0; i < n_t; ++i) table.timesteps.push_back(bin::get<std::int32_t>(in, "timestep"));
  const auto n_boxes = bin::get<std::uint32_t>(in, "box count");
  for (std::uint32_t b = 0; b < n_boxes; ++b) {
    BoxFlow box;
    box.box_id = bin::get<std::int32_t>(in, "box id");
    box.class_id = bin::get<std::int32_t>(in, "box class");
    for (int axis = 0; axis < 3; ++axis) box.center0[axis] = bin::get<double>(in, "box center");
    const auto n_members = bin::get<std::uint32_t>(in, "member count");
    if (n_members > table.spec.voxel_count()) throw InputError("flow sidecar: member count out of range");
    for (std::uint32_t i = 0; i < n_members; ++i) {
      const auto v = bin::get<std::uint32_t>(in, "member");
      if (v >= table.spec.voxel_count()) throw InputError("flow sidecar: member index out of range");
      box.members.push_back(v);
    }
    const auto n_tf = bin::get<std::uint32_t>(in, "transform count");
    for (std::uint32_t i = 0; i < n_tf; ++i) {
      const int t = bin::get<std::int32_t>(in, "transform timestep");
      Mat4 m;
      for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col) m(r, col) = bin::get<double>(in, "transform");
      box.transforms[t] = m;
    }
    table.boxes.push_back(std::move(box));
  }
  return table;
}

}  // namespace occ
