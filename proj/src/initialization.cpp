#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "jogs/error.hpp"
#include "jogs/lk3d.hpp"
#include "jogs/parallel.hpp"
#include "jogs/sfm.hpp"

namespace jogs::sfm {
namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

struct PairGeometry {
  int a = 0, b = 0;
  std::vector<std::pair<int, int>> inliers;
  Mat3 essential = Mat3::Zero();
};

struct Track {
  std::vector<TrackObservation> all;  // every image that saw this feature
  int point = -1;                     // index into the reconstruction, -1 if none
};

std::string list_images(const std::vector<int>& ids) {
  std::string s;
  for (int id : ids) s += (s.empty() ? "" : ", ") + std::to_string(id);
  return s;
}

double reprojection(const CameraPose& pose, const Vec3& x, const Vec2& pixel, const CameraIntrinsics& k) {
  const Vec3 pc = pose.rotation_matrix() * x + pose.translation;
  if (!(pc.z() > geometry::kDepthEpsilon)) return std::numeric_limits<double>::infinity();
  return (Vec2{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy} - pixel).norm();
}

class Reconstructor {
 public:
  Reconstructor(const FeatureGraph& graph, const CameraIntrinsics& k, const SfmConfig& cfg)
      : graph_(graph), k_(k), cfg_(cfg) {}

  SfmReconstruction run(const std::vector<ImageBuffer>* images) {
    const int n = static_cast<int>(graph_.keypoints.size());
    if (n < 2) throw Error(ErrorKind::kInsufficientData, "initialization needs >= 2 images");
    estimate_pairs();
    build_tracks();
    if (!bootstrap()) {
      std::vector<int> all(n);
      std::iota(all.begin(), all.end(), 0);
      throw Error(ErrorKind::kEstimationFailure,
                  "no image pair could be initialized; unregistered images: " + list_images(all));
    }
    std::set<int> failed;
    while (true) {
      const int next = next_best_image(failed);
      if (next < 0) break;
      if (!register_image(next)) {
        failed.insert(next);
        continue;
      }
      triangulate_new_tracks();
      adjust(10);
    }
    adjust(cfg_.bundle_iterations);
    if (filter_outliers() > 0) adjust(cfg_.bundle_iterations);

    SfmReconstruction out = export_reconstruction(images);
    if (out.poses.size() < 2) {
      throw Error(ErrorKind::kEstimationFailure,
                  "fewer than 2 registrable images; unregistered images: " + list_images(out.unregistered));
    }
    return out;
  }

 private:
  void estimate_pairs() {
    const auto& matches = graph_.matches;
    std::vector<std::optional<PairGeometry>> found(matches.size());
    parallel_for(matches.size(), cfg_.threads, [&](std::size_t i) {
      const MatchPair& m = matches[i];
      if (static_cast<int>(m.correspondences.size()) < std::max(8, cfg_.min_pair_inliers)) return;
      std::vector<Vec2> pa, pb;
      for (const auto& [ia, ib] : m.correspondences) {
        pa.push_back(graph_.keypoints.at(m.image_a).at(ia));
        pb.push_back(graph_.keypoints.at(m.image_b).at(ib));
      }
      RansacOptions opt = cfg_.ransac;
      opt.seed = cfg_.ransac.seed * 1000003ULL + static_cast<std::uint64_t>(i);
      try {
        const EssentialResult e = estimate_essential_ransac(pa, pb, k_, opt);
        if (e.inlier_count < cfg_.min_pair_inliers) return;
        PairGeometry g{m.image_a, m.image_b, {}, e.essential};
        for (std::size_t c = 0; c < m.correspondences.size(); ++c) {
          if (e.inliers[c]) g.inliers.push_back(m.correspondences[c]);
        }
        found[i] = std::move(g);
      } catch (const Error&) {
        // A pair without a consistent essential matrix simply contributes nothing.
      }
    });
    for (auto& f : found) {
      if (f) pairs_.push_back(std::move(*f));
    }
  }

  void build_tracks() {
    std::vector<std::size_t> offset(graph_.keypoints.size() + 1, 0);
    for (std::size_t i = 0; i < graph_.keypoints.size(); ++i) {
      offset[i + 1] = offset[i] + graph_.keypoints[i].size();
    }
    DisjointSet sets(offset.back());
    std::vector<bool> used(offset.back(), false);
    for (const auto& p : pairs_) {
      for (const auto& [ia, ib] : p.inliers) {
        sets.unite(offset[p.a] + ia, offset[p.b] + ib);
        used[offset[p.a] + ia] = used[offset[p.b] + ib] = true;
      }
    }
    std::map<std::size_t, std::vector<TrackObservation>> groups;
    for (std::size_t img = 0; img < graph_.keypoints.size(); ++img) {
      for (std::size_t kp = 0; kp < graph_.keypoints[img].size(); ++kp) {
        const std::size_t node = offset[img] + kp;
        if (!used[node]) continue;
        groups[sets.find(node)].push_back(
            {static_cast<int>(img), static_cast<int>(kp), graph_.keypoints[img][kp]});
      }
    }
    for (auto& [root, obs] : groups) {
      std::set<int> seen;
      bool consistent = true;
      for (const auto& o : obs) consistent = consistent && seen.insert(o.image).second;
      if (!consistent || obs.size() < 2) continue;  // one feature per image per track
      tracks_.push_back({std::move(obs), -1});
    }
  }

  bool bootstrap() {
    std::vector<std::size_t> order(pairs_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return pairs_[x].inliers.size() > pairs_[y].inliers.size();
    });
    for (std::size_t idx : order) {
      const PairGeometry& p = pairs_[idx];
      std::vector<Vec2> pa, pb;
      for (const auto& [ia, ib] : p.inliers) {
        pa.push_back(graph_.keypoints[p.a][ia]);
        pb.push_back(graph_.keypoints[p.b][ib]);
      }
      CameraPose relative;
      try {
        relative = recover_pose(p.essential, pa, pb, k_);
      } catch (const Error&) {
        continue;
      }
      poses_.clear();
      points_.clear();
      point_tracks_.clear();
      for (auto& t : tracks_) t.point = -1;
      poses_[p.a] = CameraPose{};
      poses_[p.b] = relative;
      reference_ = p.a;
      scale_image_ = p.b;
      triangulate_new_tracks();
      if (static_cast<int>(points_.size()) >= std::max(8, cfg_.min_pnp_inliers)) {
        adjust(cfg_.bundle_iterations);
        return true;
      }
    }
    poses_.clear();
    return false;
  }

  int next_best_image(const std::set<int>& failed) const {
    const int n = static_cast<int>(graph_.keypoints.size());
    int best = -1, best_count = 0;
    for (int img = 0; img < n; ++img) {
      if (poses_.count(img) || failed.count(img)) continue;
      int count = 0;
      for (const auto& t : tracks_) {
        if (t.point < 0) continue;
        for (const auto& o : t.all) count += o.image == img;
      }
      if (count > best_count) {
        best_count = count;
        best = img;
      }
    }
    return best_count >= std::max(4, cfg_.min_pnp_inliers) ? best : -1;
  }

  bool register_image(int img) {
    std::vector<Vec3> x;
    std::vector<Vec2> px;
    std::vector<int> track_ids;
    for (std::size_t t = 0; t < tracks_.size(); ++t) {
      if (tracks_[t].point < 0) continue;
      for (const auto& o : tracks_[t].all) {
        if (o.image != img) continue;
        x.push_back(points_[tracks_[t].point]);
        px.push_back(o.pixel);
        track_ids.push_back(static_cast<int>(t));
      }
    }
    RansacOptions opt = cfg_.ransac;
    opt.threshold_px = cfg_.pnp_threshold_px;
    opt.seed = cfg_.ransac.seed * 7919ULL + static_cast<std::uint64_t>(img) + 1;
    PnpResult r;
    try {
      r = solve_pnp_ransac(x, px, k_, opt);
    } catch (const Error&) {
      return false;
    }
    if (r.inlier_count < cfg_.min_pnp_inliers) return false;
    poses_[img] = r.pose;
    for (std::size_t i = 0; i < track_ids.size(); ++i) {
      if (!r.inliers[i]) continue;
      const Track& t = tracks_[track_ids[i]];
      for (const auto& o : t.all) {
        if (o.image == img) point_tracks_[t.point].push_back(o);
      }
    }
    return true;
  }

  void triangulate_new_tracks() {
    for (auto& t : tracks_) {
      if (t.point >= 0) continue;
      std::vector<Observation> obs;
      std::vector<TrackObservation> used;
      for (const auto& o : t.all) {
        const auto it = poses_.find(o.image);
        if (it == poses_.end()) continue;
        obs.push_back({it->second, o.pixel});
        used.push_back(o);
      }
      if (obs.size() < 2) continue;
      Vec3 x;
      try {
        x = triangulate(obs, k_);
      } catch (const Error&) {
        continue;
      }
      bool good = true;
      for (const auto& o : obs) good = good && reprojection(o.pose, x, o.pixel, k_) < cfg_.max_reprojection_px;
      if (!good) continue;
      t.point = static_cast<int>(points_.size());
      points_.push_back(x);
      point_tracks_.push_back(used);
    }
  }

  SfmReconstruction snapshot() const {
    SfmReconstruction r;
    r.poses = poses_;
    r.points = points_;
    r.tracks = point_tracks_;
    r.colors.assign(points_.size(), Vec3::Constant(0.5));
    r.reference_image = reference_;
    return r;
  }

  void adjust(int iterations) {
    if (poses_.size() < 2 || points_.empty()) return;
    BundleAdjustOptions opt;
    opt.max_iterations = iterations;
    opt.huber_px = cfg_.huber_px;
    opt.reference_image = reference_;
    opt.scale_image = scale_image_;
    const SfmReconstruction r = bundle_adjust(snapshot(), k_, opt);
    poses_ = r.poses;
    points_ = r.points;
  }

  // Drops observations that reproject badly and points left with < 2 views.
  int filter_outliers() {
    int removed = 0;
    for (std::size_t p = 0; p < points_.size(); ++p) {
      auto& obs = point_tracks_[p];
      const auto before = obs.size();
      std::erase_if(obs, [&](const TrackObservation& o) {
        return reprojection(poses_.at(o.image), points_[p], o.pixel, k_) > cfg_.max_reprojection_px;
      });
      removed += static_cast<int>(before - obs.size());
    }
    std::vector<Vec3> kept_points;
    std::vector<std::vector<TrackObservation>> kept_tracks;
    std::vector<int> remap(points_.size(), -1);
    for (std::size_t p = 0; p < points_.size(); ++p) {
      if (point_tracks_[p].size() < 2) {
        ++removed;
        continue;
      }
      remap[p] = static_cast<int>(kept_points.size());
      kept_points.push_back(points_[p]);
      kept_tracks.push_back(std::move(point_tracks_[p]));
    }
    points_ = std::move(kept_points);
    point_tracks_ = std::move(kept_tracks);
    for (auto& t : tracks_) {
      if (t.point >= 0) t.point = remap[t.point];
    }
    return removed;
  }

  SfmReconstruction export_reconstruction(const std::vector<ImageBuffer>* images) const {
    SfmReconstruction r = snapshot();
    for (int img = 0; img < static_cast<int>(graph_.keypoints.size()); ++img) {
      if (!r.poses.count(img)) r.unregistered.push_back(img);
    }
    if (r.poses.empty()) return r;
    // Re-anchor so the lowest registered image is exactly the identity.
    const int anchor = r.poses.begin()->first;
    const Mat3 r0 = r.poses[anchor].rotation_matrix();
    const Vec3 t0 = r.poses[anchor].translation;
    for (auto& [img, pose] : r.poses) {
      if (img == anchor) {
        pose = CameraPose{};
        continue;
      }
      const Mat3 rel = pose.rotation_matrix() * r0.transpose();
      pose = geometry::pose_from_rt(rel, pose.translation - rel * t0);
    }
    for (auto& x : r.points) x = r0 * x + t0;
    r.reference_image = anchor;

    if (images) {
      for (std::size_t p = 0; p < r.points.size(); ++p) {
        Vec3 sum = Vec3::Zero();
        int count = 0;
        for (const auto& o : r.tracks[p]) {
          if (o.image < 0 || o.image >= static_cast<int>(images->size())) continue;
          const auto c = lk3d::sample_bilinear((*images)[o.image], o.pixel);
          if (!c) continue;
          sum += Vec3{(*c)[0], (*c)[1], (*c)[2]};
          ++count;
        }
        if (count > 0) r.colors[p] = sum / count;
      }
    }
    return r;
  }

  const FeatureGraph& graph_;
  const CameraIntrinsics& k_;
  const SfmConfig& cfg_;
  std::vector<PairGeometry> pairs_;
  std::vector<Track> tracks_;
  std::map<int, CameraPose> poses_;
  std::vector<Vec3> points_;
  std::vector<std::vector<TrackObservation>> point_tracks_;
  int reference_ = 0;
  int scale_image_ = -1;
};

}  // namespace

SfmReconstruction reconstruct(const FeatureGraph& graph, const CameraIntrinsics& intrinsics,
                              const SfmConfig& config, const std::vector<ImageBuffer>* images) {
  intrinsics.validate();
  Reconstructor r(graph, intrinsics, config);
  return r.run(images);
}

SfmReconstruction run_initialization(const std::vector<ImageBuffer>& images,
                                     const CameraIntrinsics& intrinsics, const SfmConfig& config) {
  if (images.size() < 2) throw Error(ErrorKind::kInsufficientData, "initialization needs >= 2 images");
  std::vector<std::vector<Keypoint>> features(images.size());
  parallel_for(images.size(), config.threads,
               [&](std::size_t i) { features[i] = detect_features(images[i], config.features); });

  FeatureGraph graph;
  for (const auto& f : features) {
    std::vector<Vec2> pos;
    for (const auto& kp : f) pos.push_back(kp.position);
    graph.keypoints.push_back(std::move(pos));
  }
  std::vector<std::pair<int, int>> pair_ids;
  for (int a = 0; a < static_cast<int>(images.size()); ++a) {
    for (int b = a + 1; b < static_cast<int>(images.size()); ++b) pair_ids.emplace_back(a, b);
  }
  graph.matches.resize(pair_ids.size());
  parallel_for(pair_ids.size(), config.threads, [&](std::size_t i) {
    const auto [a, b] = pair_ids[i];
    MatchPair m = match_features(features[a], features[b], config.match_ratio);
    m.image_a = a;
    m.image_b = b;
    graph.matches[i] = std::move(m);
  });
  return reconstruct(graph, intrinsics, config, &images);
}

splat::GaussianCloud seed_cloud(const SfmReconstruction& recon) {
  splat::GaussianCloud cloud;
  const std::size_t n = recon.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    d.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d.push_back((recon.points[i] - recon.points[j]).norm());
    }
    const std::size_t kn = std::min<std::size_t>(3, d.size());
    std::partial_sort(d.begin(), d.begin() + kn, d.end());
    double mean = 0.0;
    for (std::size_t j = 0; j < kn; ++j) mean += d[j];
    mean = kn > 0 ? mean / kn : 0.0;
    if (!(mean > 1e-7)) mean = 1e-2;  // isolated or duplicated point
    splat::GaussianPrimitive g;
    g.position = recon.points[i];
    g.log_scale = Vec3::Constant(std::log(mean));
    g.opacity_logit = splat::logit(0.1);
    g.color = i < recon.colors.size() ? recon.colors[i] : Vec3::Constant(0.5);
    cloud.gaussians.push_back(g);
  }
  return cloud;
}

}  // namespace jogs::sfm
