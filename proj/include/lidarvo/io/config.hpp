#pragma once

// INI configuration for the pipeline: one section per module, every key
// optional and defaulting to the built-in value. "section.key=value"
// overrides are applied on top of a file.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/pipeline.hpp"

namespace lidarvo::io {

struct ConfigField {
  std::string section;
  std::string key;
  std::string doc;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;

  std::string name() const { return section + "." + key; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_value(const std::string& raw, const std::string& name) {
  const std::string s = trim(raw);
  const auto bad = [&]() { return ConfigError("invalid value '" + s + "' for " + name); };
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw bad();
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_value<int>(item, name));
    return out;
  } else {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) throw bad();
    return v;
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  } else {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  }
}

template <typename T>
ConfigField field(std::string section, std::string key, T& (*access)(PipelineConfig&), std::string doc) {
  ConfigField f{section, key, std::move(doc), {}, {}};
  const std::string name = f.name();
  f.get = [access](const PipelineConfig& c) { return format_value(access(const_cast<PipelineConfig&>(c))); };
  f.set = [access, name](PipelineConfig& c, const std::string& v) { access(c) = parse_value<T>(v, name); };
  return f;
}

inline ConfigField class_list(std::string key, std::array<bool, 256> ClassTable::*flags, std::string doc) {
  ConfigField f{"semantic", key, std::move(doc), {}, {}};
  const std::string name = f.name();
  f.get = [flags](const PipelineConfig& c) {
    std::vector<int> ids;
    for (int i = 0; i < 256; ++i)
      if ((c.classes.*flags)[static_cast<std::size_t>(i)]) ids.push_back(i);
    return format_value(ids);
  };
  f.set = [flags, name](PipelineConfig& c, const std::string& v) {
    std::array<bool, 256> out{};
    if (!trim(v).empty()) {
      for (int id : parse_value<std::vector<int>>(v, name)) {
        if (id < 0 || id > 255) throw ConfigError("class id out of range in " + name + ": " + std::to_string(id));
        out[static_cast<std::size_t>(id)] = true;
      }
    }
    c.classes.*flags = out;
  };
  return f;
}

inline void solver_fields(std::vector<ConfigField>& out, const std::string& section,
                          nlls::SolverOptions& (*access)(PipelineConfig&)) {
  using SO = nlls::SolverOptions;
  const auto add = [&](const std::string& key, auto SO::*member, const std::string& doc) {
    using T = std::remove_reference_t<decltype(std::declval<SO&>().*member)>;
    ConfigField f{section, key, doc, {}, {}};
    const std::string name = f.name();
    f.get = [access, member](const PipelineConfig& c) {
      return format_value(access(const_cast<PipelineConfig&>(c)).*member);
    };
    f.set = [access, member, name](PipelineConfig& c, const std::string& v) {
      access(c).*member = parse_value<T>(v, name);
    };
    out.push_back(f);
  };
  add("max_iterations", &SO::max_iterations, "Levenberg-Marquardt iteration cap");
  add("gradient_tolerance", &SO::gradient_tolerance, "stop when the max-norm gradient falls below this");
  add("parameter_tolerance", &SO::parameter_tolerance, "stop when the relative step falls below this");
  add("function_tolerance", &SO::function_tolerance, "stop when the relative cost decrease falls below this");
  add("initial_lambda", &SO::initial_lambda, "initial damping");
  add("lambda_up", &SO::lambda_up, "damping factor after a rejected step");
  add("lambda_down", &SO::lambda_down, "damping divisor after an accepted step");
  add("max_lambda", &SO::max_lambda, "give up when the damping exceeds this");
}

#define LIDARVO_FIELD(section, key, expr, doc) \
  detail::field(section, key, +[](PipelineConfig& c) -> auto& { return c.expr; }, doc)

}  // namespace detail

/// Every configurable value, in file order.
inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    // depth
    f.push_back(LIDARVO_FIELD("depth", "roi_half_width", depth.roi_half_width, "half width of the neighbourhood rectangle, pixels"));
    f.push_back(LIDARVO_FIELD("depth", "roi_half_height", depth.roi_half_height, "half height of the neighbourhood rectangle, pixels"));
    f.push_back(LIDARVO_FIELD("depth", "ground_roi_half_width", depth.ground_roi_half_width, "ground features: half width, pixels"));
    f.push_back(LIDARVO_FIELD("depth", "ground_roi_half_height", depth.ground_roi_half_height, "ground features: half height, pixels"));
    f.push_back(LIDARVO_FIELD("depth", "histogram_bin_width", depth.histogram_bin_width, "foreground segmentation bin width, meters"));
    f.push_back(LIDARVO_FIELD("depth", "significant_bin_count", depth.significant_bin_count, "points a bin needs to count as a surface"));
    f.push_back(LIDARVO_FIELD("depth", "max_depth", depth.max_depth, "estimates beyond this are RejectedRange, meters"));
    f.push_back(LIDARVO_FIELD("depth", "max_incidence_angle_deg", depth.max_incidence_angle_deg, "steeper planes are RejectedAngle, degrees"));
    f.push_back(LIDARVO_FIELD("depth", "min_triangle_area", depth.min_triangle_area, "smallest spanning triangle, square meters"));
    f.push_back(LIDARVO_FIELD("depth", "min_triangle_area_ground", depth.min_triangle_area_ground, "same for ground features"));
    f.push_back(LIDARVO_FIELD("depth", "exhaustive_cap", depth.exhaustive_cap, "triangle search is exhaustive up to this many points"));
    f.push_back(LIDARVO_FIELD("depth", "ground_ransac_threshold", depth.ground_ransac_threshold, "ground inlier distance, meters"));
    f.push_back(LIDARVO_FIELD("depth", "ground_ransac_iterations", depth.ground_ransac_iterations, "ground RANSAC hypotheses"));
    f.push_back(LIDARVO_FIELD("depth", "ground_min_inlier_ratio", depth.ground_min_inlier_ratio, "minimum inlier fraction for a ground plane"));
    f.push_back(LIDARVO_FIELD("depth", "ground_max_tilt_deg", depth.ground_max_tilt_deg, "ground normal tilt limit, degrees; <= 0 disables"));
    f.push_back(LIDARVO_FIELD("depth", "ground_vicinity", depth.ground_vicinity, "ground branch point and hit tolerance, meters"));
    f.push_back(LIDARVO_FIELD("depth", "ground_seed", depth.ground_seed, "RANSAC seed"));
    // tracker
    f.push_back(LIDARVO_FIELD("tracker", "max_corners", tracker.max_corners, "live tracks per frame"));
    f.push_back(LIDARVO_FIELD("tracker", "nms_radius", tracker.nms_radius, "corner suppression radius, pixels"));
    f.push_back(LIDARVO_FIELD("tracker", "quality_level", tracker.quality_level, "corner score relative to the strongest"));
    f.push_back(LIDARVO_FIELD("tracker", "score_window", tracker.score_window, "structure tensor half window"));
    f.push_back(LIDARVO_FIELD("tracker", "patch_radius", tracker.patch_radius, "matching patch half size"));
    f.push_back(LIDARVO_FIELD("tracker", "search_radius", tracker.search_radius, "matching search radius, pixels"));
    f.push_back(LIDARVO_FIELD("tracker", "max_normalized_ssd", tracker.max_normalized_ssd, "match acceptance threshold"));
    f.push_back(LIDARVO_FIELD("tracker", "max_flow_deviation", tracker.max_flow_deviation, "flow deviation from the local median, pixels"));
    f.push_back(LIDARVO_FIELD("tracker", "median_radius", tracker.median_radius, "radius of the local median flow, pixels"));
    f.push_back(LIDARVO_FIELD("tracker", "border", tracker.border, "corner-free image border, pixels"));
    // semantic
    f.push_back(LIDARVO_FIELD("semantic", "enabled", use_semantics, "use label images when the sequence has them"));
    f.push_back(LIDARVO_FIELD("semantic", "erosion_kernel", semantic_erosion, "square erosion of the dynamic mask, pixels"));
    f.push_back(detail::class_list("dynamic_classes", &ClassTable::dynamic, "label ids of moving objects"));
    f.push_back(detail::class_list("vegetation_classes", &ClassTable::vegetation, "label ids of vegetation"));
    f.push_back(detail::class_list("ground_classes", &ClassTable::ground, "label ids of the road surface"));
    // prior
    f.push_back(LIDARVO_FIELD("prior", "pnp_loss_scale", prior.pnp_loss_scale, "Cauchy scale of the PnP term, pixels"));
    f.push_back(LIDARVO_FIELD("prior", "epipolar_loss_scale", prior.epipolar_loss_scale, "Cauchy scale of the epipolar term"));
    f.push_back(LIDARVO_FIELD("prior", "pnp_weight", prior.pnp_weight, "PnP weight"));
    f.push_back(LIDARVO_FIELD("prior", "epipolar_weight", prior.epipolar_weight, "epipolar weight"));
    f.push_back(LIDARVO_FIELD("prior", "use_epipolar", prior.use_epipolar, "add the epipolar term for matches with depth"));
    f.push_back(LIDARVO_FIELD("prior", "min_initial_depth", prior.min_initial_depth, "PnP points closer than this at the start are skipped, meters"));
    detail::solver_fields(f, "prior", +[](PipelineConfig& c) -> nlls::SolverOptions& { return c.prior.solver; });
    f.push_back(LIDARVO_FIELD("prior", "time_bound", prior.solver.time_bound, "seconds per frame; <= 0 is unbounded"));
    // window
    f.push_back(LIDARVO_FIELD("window", "keyframe_interval", window.keyframe_interval, "seconds between sparsified keyframes"));
    f.push_back(LIDARVO_FIELD("window", "turn_angle_threshold", window.turn_angle_threshold, "frames turning faster are required keyframes, rad"));
    f.push_back(LIDARVO_FIELD("window", "min_mean_flow", window.min_mean_flow, "frames with less flow are rejected, pixels"));
    f.push_back(LIDARVO_FIELD("window", "min_connectivity", window.min_connectivity, "shared tracks needed to extend the window"));
    f.push_back(LIDARVO_FIELD("window", "window_min", window.window_min, "fewest keyframes in a window"));
    f.push_back(LIDARVO_FIELD("window", "window_max", window.window_max, "most keyframes in a window"));
    f.push_back(LIDARVO_FIELD("window", "near_limit", window.near_limit, "near bin upper bound, meters"));
    f.push_back(LIDARVO_FIELD("window", "middle_limit", window.middle_limit, "middle bin upper bound, meters"));
    f.push_back(LIDARVO_FIELD("window", "quota_near", window.quota_near, "landmarks kept in the near bin"));
    f.push_back(LIDARVO_FIELD("window", "quota_middle", window.quota_middle, "landmarks kept in the middle bin"));
    f.push_back(LIDARVO_FIELD("window", "quota_far", window.quota_far, "landmarks kept in the far bin"));
    f.push_back(LIDARVO_FIELD("window", "voxel_near", window.voxel_near, "near voxel size, meters; 0 disables"));
    f.push_back(LIDARVO_FIELD("window", "voxel_middle", window.voxel_middle, "middle voxel size, meters; 0 disables"));
    f.push_back(LIDARVO_FIELD("window", "voxel_far", window.voxel_far, "far voxel size, meters; 0 disables"));
    f.push_back(LIDARVO_FIELD("window", "vegetation_weight", window.vegetation_weight, "weight of vegetation landmarks"));
    f.push_back(LIDARVO_FIELD("window", "seed", window.seed, "middle bin sampling seed"));
    f.push_back(LIDARVO_FIELD("window", "w0", window.w0, "scale regularizer weight"));
    f.push_back(LIDARVO_FIELD("window", "w1", window.w1, "reprojection weight"));
    f.push_back(LIDARVO_FIELD("window", "w2", window.w2, "depth weight"));
    f.push_back(LIDARVO_FIELD("window", "reprojection_loss", window.reprojection_loss, "Cauchy scale, pixels"));
    f.push_back(LIDARVO_FIELD("window", "depth_loss", window.depth_loss, "Cauchy scale, meters"));
    f.push_back(LIDARVO_FIELD("window", "auto_balance", window.auto_balance, "rescale w2 to match the reprojection cost"));
    f.push_back(LIDARVO_FIELD("window", "balance_min", window.balance_min, "lower clamp of the balanced w2"));
    f.push_back(LIDARVO_FIELD("window", "balance_max", window.balance_max, "upper clamp of the balanced w2"));
    f.push_back(LIDARVO_FIELD("window", "balance_floor", window.balance_floor, "mean cost below which a class is not balanced"));
    f.push_back(LIDARVO_FIELD("window", "squared_scale", window.squared_scale, "scale regularizer on the squared baseline"));
    f.push_back(LIDARVO_FIELD("window", "use_scale_regularizer", window.use_scale_regularizer, "add the scale regularizer"));
    f.push_back(LIDARVO_FIELD("window", "use_depth", window.use_depth, "add depth residuals"));
    // trim
    f.push_back(LIDARVO_FIELD("trim", "steps", trim.steps, "iterations before each trimming stage"));
    f.push_back(LIDARVO_FIELD("trim", "rejection_percent", trim.rejection_percent, "blocks removed per class and stage, percent"));
    f.push_back(LIDARVO_FIELD("trim", "time_bound", trim.time_bound, "seconds per window; <= 0 is unbounded"));
    detail::solver_fields(f, "trim", +[](PipelineConfig& c) -> nlls::SolverOptions& { return c.trim.solver; });
    // pipeline
    {
      ConfigField m{"pipeline", "mode", "full or prior_only", {}, {}};
      m.get = [](const PipelineConfig& c) { return std::string(to_string(c.mode)); };
      m.set = [](PipelineConfig& c, const std::string& v) { c.mode = parse_mode(detail::trim(v)); };
      f.push_back(m);
    }
    f.push_back(LIDARVO_FIELD("pipeline", "max_frames", max_frames, "frames to process; 0 is all"));
    f.push_back(LIDARVO_FIELD("pipeline", "prefetch", prefetch, "load the next frame while estimating the current one"));
    return f;
  }();
  return fields;
}

#undef LIDARVO_FIELD

inline const ConfigField& find_config_field(const std::string& section, const std::string& key) {
  for (const auto& f : config_fields())
    if (f.section == section && f.key == key) return f;
  throw ConfigError("unknown config key " + section + "." + key);
}

/// Applies "section.key=value".
inline void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string section = detail::trim(assignment.substr(0, dot));
  const std::string key = detail::trim(assignment.substr(dot + 1, eq - dot - 1));
  find_config_field(section, key).set(cfg, assignment.substr(eq + 1));
}

inline PipelineConfig parse_config(std::istream& in, const std::string& source, PipelineConfig cfg = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, e.line(), e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key outside a section: " + section);
    for (const auto& [key, value] : body) find_config_field(section, key).set(cfg, value.data());
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  return parse_config(in, path.string());
}

/// Complete config file with every key and its documentation.
inline void write_config(std::ostream& out, const PipelineConfig& cfg) {
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    out << "; " << f.doc << '\n' << f.key << " = " << f.get(cfg) << '\n';
  }
}

}  // namespace lidarvo::io
