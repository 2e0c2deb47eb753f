#pragma once

// Feature tracks, a small corner tracker, the track-file reader/writer and
// the semantic filter that rejects features on dynamic objects.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"
#include "lidarvo/image.hpp"
#include "lidarvo/pointcloud_depth.hpp"

namespace lidarvo {

enum class SemanticLabel { Infrastructure, Vegetation, Dynamic, Unknown };

inline const char* to_string(SemanticLabel l) {
  switch (l) {
    case SemanticLabel::Infrastructure: return "infrastructure";
    case SemanticLabel::Vegetation: return "vegetation";
    case SemanticLabel::Dynamic: return "dynamic";
    case SemanticLabel::Unknown: return "unknown";
  }
  return "?";
}

struct Observation {
  int frame_id = 0;
  Vec2 pixel = Vec2::Zero();
  std::optional<DepthEstimate> depth;
};

struct FeatureTrack {
  long track_id = 0;
  std::vector<Observation> observations;
  SemanticLabel semantic_label = SemanticLabel::Unknown;

  /// Appends an observation; frame ids must increase strictly.
  void add(int frame_id, const Vec2& pixel) {
    if (!observations.empty() && frame_id <= observations.back().frame_id)
      throw Error("track " + std::to_string(track_id) + ": frame ids must increase");
    observations.push_back({frame_id, pixel, std::nullopt});
  }

  const Observation* find(int frame_id) const {
    const auto it = std::lower_bound(observations.begin(), observations.end(), frame_id,
                                     [](const Observation& o, int f) { return o.frame_id < f; });
    return it != observations.end() && it->frame_id == frame_id ? &*it : nullptr;
  }
  Observation* find(int frame_id) {
    return const_cast<Observation*>(static_cast<const FeatureTrack&>(*this).find(frame_id));
  }
};

// ---------------------------------------------------------------------------
// Track files: one "track_id frame_id u v" line per observation.

inline std::vector<FeatureTrack> ingest_tracks(std::istream& in, const std::string& source = "tracks") {
  struct Raw {
    int frame;
    Vec2 px;
    std::size_t line;
  };
  std::map<long, std::vector<Raw>> by_id;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    long id;
    int frame;
    double u, v;
    std::string extra;
    if (!(fields >> id >> frame >> u >> v)) throw ParseError(source, number, "expected 'track_id frame_id u v'");
    if (fields >> extra) throw ParseError(source, number, "trailing fields");
    if (frame < 0) throw ParseError(source, number, "negative frame id");
    if (!std::isfinite(u) || !std::isfinite(v)) throw ParseError(source, number, "non-finite pixel");
    by_id[id].push_back({frame, Vec2(u, v), number});
  }
  std::vector<FeatureTrack> tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, raw] : by_id) {
    std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.frame < b.frame; });
    FeatureTrack t;
    t.track_id = id;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (i > 0 && raw[i].frame == raw[i - 1].frame)
        throw ParseError(source, std::max(raw[i].line, raw[i - 1].line),
                         "duplicate frame " + std::to_string(raw[i].frame) + " in track " +
                             std::to_string(id));
      t.observations.push_back({raw[i].frame, raw[i].px, std::nullopt});
    }
    tracks.push_back(std::move(t));
  }
  return tracks;
}

inline std::vector<FeatureTrack> ingest_tracks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  return ingest_tracks(in, path.string());
}

/// Writes observations frame by frame, which is the order a matcher emits them.
inline void write_tracks(const std::filesystem::path& path, const std::vector<FeatureTrack>& tracks) {
  std::vector<std::tuple<int, long, Vec2>> rows;
  for (const auto& t : tracks)
    for (const auto& o : t.observations) rows.emplace_back(o.frame_id, t.track_id, o.pixel);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  for (const auto& [frame, id, px] : rows) out << id << ' ' << frame << ' ' << px.x() << ' ' << px.y() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Semantic filtering.

/// Per-class flags indexed by label id.
struct ClassTable {
  std::array<bool, 256> dynamic{};
  std::array<bool, 256> vegetation{};
  std::array<bool, 256> ground{};

  /// Cityscapes ids: road 7, sidewalk 8, vegetation 21 and the human and
  /// vehicle classes 24-33.
  static ClassTable cityscapes() {
    ClassTable t;
    for (int id = 24; id <= 33; ++id) t.dynamic[id] = true;
    t.vegetation[21] = true;
    t.ground[7] = t.ground[8] = true;
    return t;
  }

  /// Sets the dynamic / vegetation / ground ids from explicit lists.
  static ClassTable from_lists(const std::vector<int>& dynamic_ids, const std::vector<int>& vegetation_ids,
                               const std::vector<int>& ground_ids) {
    ClassTable t;
    const auto set = [](std::array<bool, 256>& flags, const std::vector<int>& ids) {
      for (int id : ids) {
        if (id < 0 || id > 255) throw ConfigError("class id out of range: " + std::to_string(id));
        flags[static_cast<std::size_t>(id)] = true;
      }
    };
    set(t.dynamic, dynamic_ids);
    set(t.vegetation, vegetation_ids);
    set(t.ground, ground_ids);
    return t;
  }
};

struct SemanticImage {
  GrayImage labels;
  ClassTable table = ClassTable::cityscapes();
};

/// Binary dynamic mask eroded with a k x k square. Pixels outside the image do
/// not erode, so a dynamic pixel survives when every in-image pixel within
/// Chebyshev distance k/2 is dynamic.
inline std::vector<std::uint8_t> eroded_dynamic_mask(const SemanticImage& img, int kernel) {
  const int w = img.labels.width, h = img.labels.height;
  const int r = std::max(0, kernel / 2);
  std::vector<std::uint8_t> mask(img.labels.data.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img.table.dynamic[img.labels.data[i]] ? 1 : 0;
  if (r == 0) return mask;
  std::vector<std::uint8_t> horiz(mask.size());
  std::vector<int> prefix(static_cast<std::size_t>(std::max(w, h)) + 1);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = &mask[static_cast<std::size_t>(y) * w];
    prefix[0] = 0;
    for (int x = 0; x < w; ++x) prefix[x + 1] = prefix[x] + (row[x] ? 0 : 1);
    for (int x = 0; x < w; ++x) {
      const int lo = std::max(0, x - r), hi = std::min(w - 1, x + r);
      horiz[static_cast<std::size_t>(y) * w + x] = prefix[hi + 1] - prefix[lo] == 0 ? 1 : 0;
    }
  }
  std::vector<std::uint8_t> out(mask.size());
  for (int x = 0; x < w; ++x) {
    prefix[0] = 0;
    for (int y = 0; y < h; ++y) prefix[y + 1] = prefix[y] + (horiz[static_cast<std::size_t>(y) * w + x] ? 0 : 1);
    for (int y = 0; y < h; ++y) {
      const int lo = std::max(0, y - r), hi = std::min(h - 1, y + r);
      out[static_cast<std::size_t>(y) * w + x] = prefix[hi + 1] - prefix[lo] == 0 ? 1 : 0;
    }
  }
  return out;
}

/// Semantic image with its eroded dynamic mask computed once.
class SemanticFrame {
 public:
  SemanticFrame(SemanticImage image, int kernel)
      : image_(std::move(image)), mask_(eroded_dynamic_mask(image_, kernel)) {}

  const SemanticImage& image() const noexcept { return image_; }
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }

  /// 3x3 vote around a pixel. Ties between dynamic and static count as
  /// dynamic; otherwise the raw labels decide between vegetation and
  /// infrastructure by majority.
  SemanticLabel vote(const Vec2& pixel) const {
    const int cx = static_cast<int>(std::lround(pixel.x()));
    const int cy = static_cast<int>(std::lround(pixel.y()));
    int total = 0, dynamic = 0, vegetation = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (!image_.labels.inside(x, y)) continue;
        ++total;
        const std::size_t i = static_cast<std::size_t>(y) * image_.labels.width + x;
        dynamic += mask_[i];
        vegetation += image_.table.vegetation[image_.labels.data[i]] ? 1 : 0;
      }
    }
    if (total == 0) return SemanticLabel::Unknown;
    if (2 * dynamic >= total) return SemanticLabel::Dynamic;
    return 2 * vegetation > total ? SemanticLabel::Vegetation : SemanticLabel::Infrastructure;
  }

  /// Ground class at the pixel (road or sidewalk by default).
  bool is_ground(const Vec2& pixel) const {
    const int x = static_cast<int>(std::lround(pixel.x()));
    const int y = static_cast<int>(std::lround(pixel.y()));
    if (!image_.labels.inside(x, y)) return false;
    return image_.table.ground[image_.labels.at(x, y)];
  }

 private:
  SemanticImage image_;
  std::vector<std::uint8_t> mask_;
};

/// Labels the track from the newest observation and returns the label.
inline SemanticLabel semantic_filter(FeatureTrack& track, const SemanticFrame& frame) {
  if (track.observations.empty()) return track.semantic_label;
  track.semantic_label = frame.vote(track.observations.back().pixel);
  return track.semantic_label;
}

inline SemanticLabel semantic_filter(FeatureTrack& track, const SemanticImage& labels,
                                     int erosion_kernel = 21) {
  return semantic_filter(track, SemanticFrame(labels, erosion_kernel));
}

// ---------------------------------------------------------------------------
// Corner tracker.

struct TrackerConfig {
  int max_corners = 1500;
  int nms_radius = 6;
  /// Corners weaker than this fraction of the strongest are dropped.
  double quality_level = 0.01;
  int score_window = 2;  // half size of the structure tensor window
  int patch_radius = 4;
  int search_radius = 40;
  /// SSD divided by the summed patch variances; 0 for identical patches,
  /// about 1 for unrelated ones.
  double max_normalized_ssd = 0.3;
  double max_flow_deviation = 4.0;
  double median_radius = 80.0;
  int border = 8;
};

struct Match {
  Vec2 prev;
  Vec2 next;
  std::size_t prev_index = 0;
};

namespace detail {

inline std::vector<float> min_eigen_scores(const GrayImage& img, int window) {
  const int w = img.width, h = img.height;
  std::vector<float> ixx(static_cast<std::size_t>(w) * h), iyy(ixx.size()), ixy(ixx.size());
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      const auto p = [&](int dx, int dy) { return static_cast<float>(img.at(x + dx, y + dy)); };
      const float gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1) - p(-1, -1) - 2 * p(-1, 0) - p(-1, 1)) / 8.0f;
      const float gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1) - p(-1, -1) - 2 * p(0, -1) - p(1, -1)) / 8.0f;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ixx[i] = gx * gx;
      iyy[i] = gy * gy;
      ixy[i] = gx * gy;
    }
  }
  // box filter via integral images
  const auto integral = [&](const std::vector<float>& src) {
    std::vector<double> s(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        s[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = src[static_cast<std::size_t>(y) * w + x] +
                                                             s[static_cast<std::size_t>(y) * (w + 1) + x + 1] +
                                                             s[static_cast<std::size_t>(y + 1) * (w + 1) + x] -
                                                             s[static_cast<std::size_t>(y) * (w + 1) + x];
    return s;
  };
  const auto sxx = integral(ixx), syy = integral(iyy), sxy = integral(ixy);
  const auto box = [&](const std::vector<double>& s, int x0, int y0, int x1, int y1) {
    return s[static_cast<std::size_t>(y1 + 1) * (w + 1) + x1 + 1] - s[static_cast<std::size_t>(y0) * (w + 1) + x1 + 1] -
           s[static_cast<std::size_t>(y1 + 1) * (w + 1) + x0] + s[static_cast<std::size_t>(y0) * (w + 1) + x0];
  };
  std::vector<float> score(ixx.size(), 0.0f);
  for (int y = window; y + window < h; ++y) {
    for (int x = window; x + window < w; ++x) {
      const double a = box(sxx, x - window, y - window, x + window, y + window);
      const double b = box(sxy, x - window, y - window, x + window, y + window);
      const double c = box(syy, x - window, y - window, x + window, y + window);
      const double tr = 0.5 * (a + c);
      const double det = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
      score[static_cast<std::size_t>(y) * w + x] = static_cast<float>(tr - det);
    }
  }
  return score;
}

/// Sum of squared differences between the patch around integer pixel a in
/// img_a and around integer pixel b in img_b, with the mean patch variance.
inline std::pair<double, double> patch_ssd(const GrayImage& img_a, int ax, int ay, const GrayImage& img_b,
                                           int bx, int by, int r) {
  double ssd = 0, sa = 0, sb = 0, saa = 0, sbb = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double va = img_a.at(ax + dx, ay + dy), vb = img_b.at(bx + dx, by + dy);
      ssd += (va - vb) * (va - vb);
      sa += va;
      sb += vb;
      saa += va * va;
      sbb += vb * vb;
    }
  }
  const double n = (2 * r + 1) * (2 * r + 1);
  const double var = (saa - sa * sa / n) + (sbb - sb * sb / n);
  return {ssd, var};
}

inline double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

}  // namespace detail

/// Shi-Tomasi corners after non-maximum suppression, strongest first.
inline std::vector<Vec2> detect_corners(const GrayImage& img, const TrackerConfig& cfg) {
  if (img.width < 3 || img.height < 3) return {};
  const auto score = detail::min_eigen_scores(img, cfg.score_window);
  const float best = *std::max_element(score.begin(), score.end());
  if (!(best > 0.0f)) return {};
  const float floor_score = static_cast<float>(cfg.quality_level) * best;
  struct Candidate {
    float s;
    int x, y;
  };
  std::vector<Candidate> cands;
  const int b = std::max(cfg.border, cfg.patch_radius + 2);
  for (int y = b; y < img.height - b; ++y) {
    for (int x = b; x < img.width - b; ++x) {
      const float s = score[static_cast<std::size_t>(y) * img.width + x];
      if (s < floor_score) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if ((dx || dy) && score[static_cast<std::size_t>(y + dy) * img.width + x + dx] > s) {
            is_max = false;
            break;
          }
      if (is_max) cands.push_back({s, x, y});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& c) {
    if (a.s != c.s) return a.s > c.s;
    return std::tie(a.y, a.x) < std::tie(c.y, c.x);
  });
  // greedy suppression within the radius on a coarse occupancy grid
  const int cell = std::max(1, cfg.nms_radius);
  const int gw = img.width / cell + 1, gh = img.height / cell + 1;
  std::vector<std::vector<Vec2>> grid(static_cast<std::size_t>(gw) * gh);
  std::vector<Vec2> out;
  const double r2 = static_cast<double>(cfg.nms_radius) * cfg.nms_radius;
  for (const auto& c : cands) {
    if (static_cast<int>(out.size()) >= cfg.max_corners) break;
    const int gx = c.x / cell, gy = c.y / cell;
    bool blocked = false;
    for (int yy = std::max(0, gy - 1); yy <= std::min(gh - 1, gy + 1) && !blocked; ++yy)
      for (int xx = std::max(0, gx - 1); xx <= std::min(gw - 1, gx + 1) && !blocked; ++xx)
        for (const Vec2& q : grid[static_cast<std::size_t>(yy) * gw + xx])
          if ((q - Vec2(c.x, c.y)).squaredNorm() < r2) {
            blocked = true;
            break;
          }
    if (blocked) continue;
    out.emplace_back(c.x, c.y);
    grid[static_cast<std::size_t>(gy) * gw + gx].emplace_back(c.x, c.y);
  }
  return out;
}

/// Matches each previous point to a corner of the next image by patch SSD
/// within the search window, refines the match to subpixel precision and
/// rejects matches whose flow disagrees with the median flow around them.
inline std::vector<Match> track_features(const GrayImage& prev, const GrayImage& next,
                                         const std::vector<Vec2>& prev_points,
                                         const TrackerConfig& cfg) {
  if (prev.width != next.width || prev.height != next.height)
    throw Error("tracked images differ in size");
  const auto corners = detect_corners(next, cfg);
  const int cell = std::max(8, cfg.search_radius);
  const int gw = next.width / cell + 1, gh = next.height / cell + 1;
  std::vector<std::vector<int>> grid(static_cast<std::size_t>(gw) * gh);
  for (std::size_t i = 0; i < corners.size(); ++i)
    grid[static_cast<std::size_t>(static_cast<int>(corners[i].y()) / cell) * gw +
         static_cast<int>(corners[i].x()) / cell]
        .push_back(static_cast<int>(i));

  const int r = cfg.patch_radius;
  const auto patch_ok = [&](const GrayImage& img, int x, int y) {
    return x - r - 1 >= 0 && y - r - 1 >= 0 && x + r + 1 < img.width && y + r + 1 < img.height;
  };
  std::vector<Match> matches;
  for (std::size_t pi = 0; pi < prev_points.size(); ++pi) {
    const Vec2& p = prev_points[pi];
    const int px = static_cast<int>(std::lround(p.x())), py = static_cast<int>(std::lround(p.y()));
    if (!patch_ok(prev, px, py)) continue;
    const int gx = px / cell, gy = py / cell;
    double best = std::numeric_limits<double>::infinity(), best_var = 0;
    int bx = -1, by = -1;
    for (int yy = std::max(0, gy - 1); yy <= std::min(gh - 1, gy + 1); ++yy) {
      for (int xx = std::max(0, gx - 1); xx <= std::min(gw - 1, gx + 1); ++xx) {
        for (int ci : grid[static_cast<std::size_t>(yy) * gw + xx]) {
          const Vec2& c = corners[static_cast<std::size_t>(ci)];
          if (std::abs(c.x() - px) > cfg.search_radius || std::abs(c.y() - py) > cfg.search_radius) continue;
          const int cx = static_cast<int>(c.x()), cy = static_cast<int>(c.y());
          if (!patch_ok(next, cx, cy)) continue;
          const auto [ssd, var] = detail::patch_ssd(prev, px, py, next, cx, cy, r);
          if (ssd < best) {
            best = ssd;
            best_var = var;
            bx = cx;
            by = cy;
          }
        }
      }
    }
    if (bx < 0) continue;
    // local integer refinement, then a parabola per axis
    for (bool moved = true; moved;) {
      moved = false;
      for (const auto& [dx, dy] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
        if (!patch_ok(next, bx + dx, by + dy) || std::abs(bx + dx - px) > cfg.search_radius ||
            std::abs(by + dy - py) > cfg.search_radius)
          continue;
        const auto [ssd, var] = detail::patch_ssd(prev, px, py, next, bx + dx, by + dy, r);
        if (ssd < best) {
          best = ssd;
          best_var = var;
          bx += dx;
          by += dy;
          moved = true;
          break;
        }
      }
    }
    if (!(best <= cfg.max_normalized_ssd * std::max(best_var, 1e-9))) continue;
    const auto sub = [&](int dx, int dy) {
      if (!patch_ok(next, bx + dx, by + dy)) return best;
      return detail::patch_ssd(prev, px, py, next, bx + dx, by + dy, r).first;
    };
    const auto parabola = [](double sm, double s0, double sp) {
      const double denom = sm - 2 * s0 + sp;
      if (denom <= 1e-12) return 0.0;
      return std::clamp(0.5 * (sm - sp) / denom, -0.5, 0.5);
    };
    // an exact patch match needs no refinement
    const double ox = best > 0.0 ? parabola(sub(-1, 0), best, sub(1, 0)) : 0.0;
    const double oy = best > 0.0 ? parabola(sub(0, -1), best, sub(0, 1)) : 0.0;
    // the prev point may itself be subpixel
    const Vec2 next_px = Vec2(bx + ox, by + oy) + (p - Vec2(px, py));
    matches.push_back({p, next_px, pi});
  }

  // median flow consistency
  std::vector<Match> kept;
  for (const Match& m : matches) {
    std::vector<double> fx, fy;
    for (const Match& o : matches) {
      if ((o.prev - m.prev).norm() > cfg.median_radius) continue;
      fx.push_back(o.next.x() - o.prev.x());
      fy.push_back(o.next.y() - o.prev.y());
    }
    if (fx.size() < 3) {
      fx.clear();
      fy.clear();
      for (const Match& o : matches) {
        fx.push_back(o.next.x() - o.prev.x());
        fy.push_back(o.next.y() - o.prev.y());
      }
    }
    const Vec2 med(detail::median(fx), detail::median(fy));
    if ((m.next - m.prev - med).norm() <= cfg.max_flow_deviation) kept.push_back(m);
  }
  return kept;
}

/// Builds tracks from consecutive images: follows the live points, then tops
/// them up with fresh corners away from existing ones.
class TrackBuilder {
 public:
  explicit TrackBuilder(TrackerConfig cfg = {}) : cfg_(cfg) {}

  /// Adds frame `frame_id`. Returns the ids of the tracks observed in it.
  std::vector<long> add_frame(int frame_id, const GrayImage& image) {
    std::vector<long> live;
    if (!last_image_.empty()) {
      std::vector<Vec2> pts;
      for (long id : active_) pts.push_back(tracks_[index_.at(id)].observations.back().pixel);
      const auto matches = track_features(last_image_, image, pts, cfg_);
      for (const Match& m : matches) {
        if (!inside(image, m.next)) continue;
        const long id = active_[m.prev_index];
        tracks_[index_.at(id)].add(frame_id, m.next);
        live.push_back(id);
      }
    }
    // replenish
    const auto corners = detect_corners(image, cfg_);
    const double min_d2 = static_cast<double>(cfg_.nms_radius) * cfg_.nms_radius * 4;
    std::vector<Vec2> taken;
    for (long id : live) taken.push_back(tracks_[index_.at(id)].observations.back().pixel);
    for (const Vec2& c : corners) {
      if (static_cast<int>(live.size()) >= cfg_.max_corners) break;
      bool close = false;
      for (const Vec2& t : taken)
        if ((t - c).squaredNorm() < min_d2) {
          close = true;
          break;
        }
      if (close) continue;
      FeatureTrack t;
      t.track_id = next_id_++;
      t.add(frame_id, c);
      index_[t.track_id] = tracks_.size();
      tracks_.push_back(std::move(t));
      live.push_back(tracks_.back().track_id);
      taken.push_back(c);
    }
    active_ = live;
    last_image_ = image;
    return live;
  }

  const std::vector<FeatureTrack>& tracks() const noexcept { return tracks_; }
  std::vector<FeatureTrack>& tracks() noexcept { return tracks_; }

 private:
  static bool inside(const GrayImage& img, const Vec2& p) {
    return p.x() >= 0 && p.y() >= 0 && p.x() <= img.width - 1 && p.y() <= img.height - 1;
  }

  TrackerConfig cfg_;
  GrayImage last_image_;
  std::vector<long> active_;
  std::vector<FeatureTrack> tracks_;
  std::map<long, std::size_t> index_;
  long next_id_ = 0;
};

}  // namespace lidarvo
