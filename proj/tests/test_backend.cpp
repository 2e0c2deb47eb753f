#include <random>

#include <gtest/gtest.h>

#include "lidarvo/backend.hpp"
#include "test_util.hpp"

using namespace lidarvo;

namespace {

struct Window {
  std::vector<Keyframe> keyframes;
  std::vector<Landmark> landmarks;
  std::vector<Pose> truth;
  std::vector<Vec3> points;
};

/// Camera driving forward 1 m per keyframe with a slight yaw; landmarks seen
/// by every keyframe, a fraction of the observations with exact depth.
Window make_window(unsigned seed, int n_kf = 5, int n_lm = 200, double depth_fraction = 0.3,
                   double pixel_noise = 0.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ux(-12, 12), uy(-2.5, 1.5), uz(8, 40), u01(0, 1);
  std::normal_distribution<double> noise(0, 1);
  const auto k = test::kitti_camera();
  Window w;
  for (int i = 0; i < n_kf; ++i) {
    // world-from-camera: forward along z with a small yaw
    const Pose wfc = Pose::from_axis_angle(Vec3(0, 0.01 * i, 0), Vec3(0.05 * i, 0, 1.0 * i));
    w.truth.push_back(wfc.inverse());
    w.keyframes.push_back({10 * i, 0.3 * i, wfc.inverse(), KeyframeCategory::Sparsified});
  }
  int id = 0;
  while (static_cast<int>(w.landmarks.size()) < n_lm) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    Landmark l;
    l.track_id = id++;
    l.position = p;
    bool ok = true;
    for (const auto& kf : w.keyframes) {
      const Vec3 c = kf.pose * p;
      if (c.z() < 2) {
        ok = false;
        break;
      }
      const Vec2 px = project(c, k);
      if (!k.contains(px)) {
        ok = false;
        break;
      }
      LandmarkObservation o{kf.frame_id, px + pixel_noise * Vec2(noise(rng), noise(rng)), std::nullopt};
      if (u01(rng) < depth_fraction) o.depth = c.z();
      l.observations.push_back(o);
    }
    if (!ok) continue;
    w.points.push_back(p);
    w.landmarks.push_back(l);
  }
  return w;
}

nlls::TrimConfig no_trim() {
  nlls::TrimConfig t;
  t.rejection_percent = 0;
  t.time_bound = 0;
  t.solver.max_iterations = 200;
  return t;
}

double max_translation_error(const std::vector<Keyframe>& kfs, const std::vector<Pose>& truth) {
  double worst = 0;
  for (std::size_t i = 0; i < kfs.size(); ++i)
    worst = std::max(worst, (camera_center(kfs[i].pose) - camera_center(truth[i])).norm());
  return worst;
}

double mean_translation_error(const std::vector<Keyframe>& kfs, const std::vector<Pose>& truth) {
  double sum = 0;
  for (std::size_t i = 0; i < kfs.size(); ++i) sum += (camera_center(kfs[i].pose) - camera_center(truth[i])).norm();
  return sum / static_cast<double>(kfs.size());
}

double max_rotation_error(const std::vector<Keyframe>& kfs, const std::vector<Pose>& truth) {
  double worst = 0;
  for (std::size_t i = 0; i < kfs.size(); ++i)
    worst = std::max(worst, (kfs[i].pose * truth[i].inverse()).rotation_angle());
  return worst;
}

/// Perturbs every pose but the oldest. The first baseline keeps its length,
/// since that length is the scale reference the window is tied to.
void perturb(Window& w, unsigned seed, double meters, double radians) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  const double baseline = baseline_measure(w.keyframes[0].pose, w.keyframes[1].pose);
  for (std::size_t i = 1; i < w.keyframes.size(); ++i) {
    Vec6 d;
    d << Vec3(u(rng), u(rng), u(rng)).normalized() * radians, Vec3(u(rng), u(rng), u(rng)).normalized() * meters;
    w.keyframes[i].pose = w.keyframes[i].pose.retract(d);
  }
  // rescale the relative translation of keyframe 1 back to the old length
  const Pose rel = w.keyframes[1].pose * w.keyframes[0].pose.inverse();
  const Pose fixed(rel.rotation(), rel.translation() * std::sqrt(baseline / rel.translation().squaredNorm()));
  w.keyframes[1].pose = fixed * w.keyframes[0].pose;
}

LandmarkCandidate candidate(int id, const Vec3& p, const std::vector<Keyframe>& kfs, const CameraIntrinsics& k) {
  LandmarkCandidate c;
  c.track_id = id;
  c.position = p;
  c.label = SemanticLabel::Infrastructure;
  for (const auto& kf : kfs) {
    const Vec3 x = kf.pose * p;
    c.observations.push_back({kf.frame_id, x.z() > 0 ? project(x, k) : Vec2::Zero(), std::nullopt});
  }
  c.track_length = static_cast<int>(c.observations.size());
  return c;
}

}  // namespace

TEST(ClassifyFrame, Examples) {
  WindowConfig cfg;
  EXPECT_EQ(classify_frame(Pose::identity(), 0.0, cfg), FrameClass::Rejected);
  cfg.turn_angle_threshold = 0.02;
  EXPECT_EQ(classify_frame(Pose::from_axis_angle(Vec3(0, 0.05, 0), Vec3(0, 0, -1)), 10.0, cfg),
            FrameClass::Required);
  EXPECT_EQ(classify_frame(Pose::from_translation(Vec3(0, 0, -1)), 10.0, cfg), FrameClass::Sparsifiable);
}

TEST(SelectKeyframes, TenHertzSparsifiableTakesEveryThird) {
  std::vector<ClassifiedFrame> frames;
  for (int i = 0; i < 30; ++i) frames.push_back({0.1 * i, FrameClass::Sparsifiable});
  const auto sel = select_keyframes(frames, WindowConfig{});
  for (int i = 0; i < 30; ++i) EXPECT_EQ(sel[static_cast<std::size_t>(i)], i % 3 == 0) << i;
}

TEST(SelectKeyframes, RequiredAlwaysRejectedNever) {
  std::vector<ClassifiedFrame> req, rej;
  for (int i = 0; i < 10; ++i) {
    req.push_back({0.1 * i, FrameClass::Required});
    rej.push_back({0.1 * i, FrameClass::Rejected});
  }
  for (bool b : select_keyframes(req, WindowConfig{})) EXPECT_TRUE(b);
  for (bool b : select_keyframes(rej, WindowConfig{})) EXPECT_FALSE(b);
}

TEST(SelectKeyframes, RequiredResetsTheInterval) {
  const std::vector<ClassifiedFrame> frames{{0.0, FrameClass::Sparsifiable},
                                            {0.1, FrameClass::Required},
                                            {0.3, FrameClass::Sparsifiable},
                                            {0.4, FrameClass::Sparsifiable}};
  EXPECT_EQ(select_keyframes(frames, WindowConfig{}), (std::vector<bool>{true, true, false, true}));
}

TEST(WindowLength, FullyConnectedGivesMax) {
  std::set<int> all;
  for (int i = 0; i < 50; ++i) all.insert(i);
  WindowConfig cfg;
  EXPECT_EQ(window_length(std::vector<std::set<int>>(15, all), cfg), cfg.window_max);
  EXPECT_EQ(window_length(std::vector<std::set<int>>(3, all), cfg), 3);
}

TEST(WindowLength, ConnectivityDropEndsWindow) {
  std::set<int> all, none;
  for (int i = 0; i < 50; ++i) all.insert(i);
  for (int i = 100; i < 150; ++i) none.insert(i);
  WindowConfig cfg;
  std::vector<std::set<int>> kfs(8, all);
  kfs[6] = none;
  EXPECT_EQ(window_length(kfs, cfg), 6);
  kfs[2] = none;
  EXPECT_EQ(window_length(kfs, cfg), cfg.window_min);
}

TEST(WindowLength, MatchesIntersectionOracle) {
  std::mt19937 rng(11);
  WindowConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 14);
    std::vector<std::set<int>> kfs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      // tracks live on an interval of keyframes
      for (int t = 0; t < 40; ++t) {
        const int start = static_cast<int>(rng() % 14), len = static_cast<int>(rng() % 8);
        if (i >= start && i <= start + len) kfs[static_cast<std::size_t>(i)].insert(t);
      }
    }
    int expected = 1;
    for (int i = 1; i < std::min(n, cfg.window_max); ++i) {
      std::vector<int> inter;
      std::set_intersection(kfs[0].begin(), kfs[0].end(), kfs[static_cast<std::size_t>(i)].begin(),
                            kfs[static_cast<std::size_t>(i)].end(), std::back_inserter(inter));
      if (static_cast<int>(inter.size()) < cfg.min_connectivity) break;
      expected = i + 1;
    }
    expected = std::max(expected, std::min(cfg.window_min, n));
    EXPECT_EQ(window_length(kfs, cfg), expected);
  }
}

TEST(SelectLandmarks, BehindCameraIsExcluded) {
  const auto k = test::kitti_camera();
  const Window w = make_window(1, 3, 10);
  std::vector<LandmarkCandidate> cands{candidate(1, Vec3(0, 0, 20), w.keyframes, k),
                                       candidate(2, Vec3(0, 0, -5), w.keyframes, k)};
  const auto lms = select_landmarks(cands, w.keyframes, WindowConfig{});
  ASSERT_EQ(lms.size(), 1u);
  EXPECT_EQ(lms[0].track_id, 1);
}

TEST(SelectLandmarks, CoincidentLandmarksCollapseToOne) {
  const auto k = test::kitti_camera();
  const Window w = make_window(2, 3, 10);
  std::vector<LandmarkCandidate> cands;
  for (int i = 0; i < 100; ++i) cands.push_back(candidate(i, Vec3(1, 0.5, 15), w.keyframes, k));
  EXPECT_EQ(select_landmarks(cands, w.keyframes, WindowConfig{}).size(), 1u);
}

TEST(SelectLandmarks, NearBinRanksByFlow) {
  const auto k = test::kitti_camera();
  const Window w = make_window(3, 3, 10);
  auto a = candidate(1, Vec3(2, 0, 12), w.keyframes, k);
  auto b = candidate(2, Vec3(-2, 0, 14), w.keyframes, k);
  a.flow = 4;
  b.flow = 12;
  WindowConfig cfg;
  cfg.quota_near = 1;
  const auto lms = select_landmarks({a, b}, w.keyframes, cfg);
  ASSERT_EQ(lms.size(), 1u);
  EXPECT_EQ(lms[0].track_id, 2);
}

TEST(SelectLandmarks, FarBinRanksByTrackLengthAndDynamicIsDropped) {
  const auto k = test::kitti_camera();
  const Window w = make_window(4, 3, 10);
  auto a = candidate(1, Vec3(5, 0, 120), w.keyframes, k);
  auto b = candidate(2, Vec3(-5, 0, 150), w.keyframes, k);
  auto c = candidate(3, Vec3(0, 0, 20), w.keyframes, k);
  a.track_length = 3;
  b.track_length = 9;
  c.label = SemanticLabel::Dynamic;
  WindowConfig cfg;
  cfg.quota_far = 1;
  const auto lms = select_landmarks({a, b, c}, w.keyframes, cfg);
  ASSERT_EQ(lms.size(), 1u);
  EXPECT_EQ(lms[0].track_id, 2);
  EXPECT_EQ(lms[0].bin, DepthBin::Far);
}

TEST(SelectLandmarks, BinsPartitionAndVegetationWeight) {
  const auto k = test::kitti_camera();
  const Window w = make_window(5, 3, 10);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> ux(-0.3, 0.3), uz(5, 200);
  std::vector<LandmarkCandidate> cands;
  for (int i = 0; i < 400; ++i) {
    const double z = uz(rng);
    auto c = candidate(i, Vec3(ux(rng) * z, 0.1 * ux(rng) * z, z), w.keyframes, k);
    if (i % 4 == 0) c.label = SemanticLabel::Vegetation;
    cands.push_back(c);
  }
  WindowConfig cfg;
  const auto lms = select_landmarks(cands, w.keyframes, cfg);
  std::array<int, 3> counts{};
  std::set<int> ids;
  for (const auto& l : lms) {
    EXPECT_TRUE(ids.insert(l.track_id).second);
    const double z = (w.keyframes.back().pose * l.position).z();
    switch (l.bin) {
      case DepthBin::Near: EXPECT_LT(z, 30); break;
      case DepthBin::Middle: EXPECT_TRUE(z >= 30 && z < 80); break;
      case DepthBin::Far: EXPECT_GE(z, 80); break;
    }
    ++counts[static_cast<std::size_t>(l.bin)];
    const bool veg = cands[static_cast<std::size_t>(l.track_id)].label == SemanticLabel::Vegetation;
    EXPECT_DOUBLE_EQ(l.weight, veg ? 0.9 : 1.0);
  }
  for (int c : counts) {
    EXPECT_GT(c, 0);
    EXPECT_LE(c, 100);
  }
}

TEST(SelectLandmarks, MiddleBinIsReproducibleForSeed) {
  const auto k = test::kitti_camera();
  const Window w = make_window(6, 3, 10);
  std::vector<LandmarkCandidate> cands;
  for (int i = 0; i < 300; ++i) cands.push_back(candidate(i, Vec3(0.1 * i - 15, 0, 40 + 0.1 * i), w.keyframes, k));
  WindowConfig cfg;
  cfg.quota_middle = 20;
  const auto a = select_landmarks(cands, w.keyframes, cfg);
  const auto b = select_landmarks(cands, w.keyframes, cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].track_id, b[i].track_id);
}

TEST(DepthResidual, HandEvaluated) {
  EXPECT_DOUBLE_EQ(depth_residual(Vec3(0, 0, 10), Pose::identity(), 8.0), -2.0);
  EXPECT_DOUBLE_EQ(depth_residual(Vec3(0, 0, 10), Pose::identity(), 10.0), 0.0);
}

TEST(ScaleRegularizer, Examples) {
  const Pose p0 = Pose::identity();
  const Pose p1 = Pose::from_translation(Vec3(0, 0, -1));
  const double s = baseline_measure(p0, p1);
  EXPECT_DOUBLE_EQ(s, 1.0);
  EXPECT_DOUBLE_EQ(scale_regularizer(p0, p1, s), 0.0);
  EXPECT_NEAR(scale_regularizer(p0, Pose::from_translation(Vec3(0, 0, -2)), s), 3.0, 1e-12);
  const Pose turned = Pose::from_axis_angle(Vec3(0, 0.3, 0), Vec3::Zero()) * p1;
  EXPECT_NEAR(scale_regularizer(p0, turned, s), 0.0, 1e-12);
  EXPECT_NEAR(scale_regularizer(p0, Pose::from_translation(Vec3(0, 0, -2)), 1.0, false), 1.0, 1e-12);
}

TEST(Residuals, JacobiansMatchFiniteDifferences) {
  const auto k = test::kitti_camera();
  const Pose p = Pose::from_axis_angle(Vec3(0.01, 0.05, 0), Vec3(0.3, 0.1, -2));
  const Pose q = Pose::from_axis_angle(Vec3(0, -0.02, 0.01), Vec3(0.1, 0, -1));
  const std::vector<double> l{1.0, -0.5, 15.0};
  using nlls::PoseBlock;
  using V3 = nlls::VectorBlock<3>;
  EXPECT_LT(test::max_jacobian_error(*nlls::make_autodiff<2, PoseBlock, V3>(residuals::Reprojection{Vec2(700, 180), k}),
                                     {&p}, {l}),
            1e-6);
  EXPECT_LT(test::max_jacobian_error(*nlls::make_autodiff<1, PoseBlock, V3>(residuals::Depth{12.0}), {&p}, {l}),
            1e-6);
  for (bool squared : {true, false})
    EXPECT_LT(test::max_jacobian_error(
                  *nlls::make_autodiff<1, PoseBlock, PoseBlock>(residuals::Scale{3.0, squared}), {&p, &q}, {}),
              1e-6);
}

TEST(Window, GroundTruthIsAFixedPoint) {
  Window w = make_window(20);
  const auto diag = build_and_solve_window(w.keyframes, w.landmarks, test::kitti_camera(), WindowConfig{},
                                           nlls::TrimConfig{});
  EXPECT_LT(diag.summary.final_cost, 1e-12);
  EXPECT_LT(max_translation_error(w.keyframes, w.truth), 1e-9);
  EXPECT_LT(max_rotation_error(w.keyframes, w.truth), 1e-9);
}

TEST(Window, RecoversFromPerturbation) {
  Window w = make_window(21);
  perturb(w, 1, 0.05, 0.5 * M_PI / 180);
  auto trim = nlls::TrimConfig{};
  trim.time_bound = 0;
  const auto diag = build_and_solve_window(w.keyframes, w.landmarks, test::kitti_camera(), WindowConfig{}, trim);
  EXPECT_LT(max_translation_error(w.keyframes, w.truth), 1e-4) << diag.to_string();
  EXPECT_LT(max_rotation_error(w.keyframes, w.truth), 0.01 * M_PI / 180);
}

TEST(Window, GaugePoseIsBitIdentical) {
  Window w = make_window(22, 5, 200, 0.3, 0.5);
  perturb(w, 2, 0.05, 0.01);
  const Pose before = w.keyframes[0].pose;
  build_and_solve_window(w.keyframes, w.landmarks, test::kitti_camera(), WindowConfig{}, no_trim());
  EXPECT_EQ(w.keyframes[0].pose.matrix3x4(), before.matrix3x4());
}

TEST(Window, WithoutDepthScaleFollowsRegularizer) {
  Window w = make_window(23, 5, 200, 0.0);
  perturb(w, 3, 0.05, 0.005);
  const double s = baseline_measure(w.keyframes[0].pose, w.keyframes[1].pose);
  auto trim = no_trim();
  trim.solver.max_iterations = 500;
  const auto diag = build_and_solve_window(w.keyframes, w.landmarks, test::kitti_camera(), WindowConfig{}, trim);
  EXPECT_EQ(diag.depth_blocks, 0);
  EXPECT_NEAR(baseline_measure(w.keyframes[0].pose, w.keyframes[1].pose), s, 1e-9);
}

TEST(Window, CommonLandmarkWeightFactorKeepsArgmin) {
  WindowConfig cfg;
  cfg.use_scale_regularizer = false;
  Window a = make_window(24, 5, 150, 0.3, 0.7);
  perturb(a, 4, 0.03, 0.004);
  Window b = a;
  for (auto& l : b.landmarks) l.weight *= 0.5;
  auto trim = no_trim();
  trim.solver.max_iterations = 500;
  trim.solver.function_tolerance = 0;
  trim.solver.parameter_tolerance = 1e-15;
  build_and_solve_window(a.keyframes, a.landmarks, test::kitti_camera(), cfg, trim);
  build_and_solve_window(b.keyframes, b.landmarks, test::kitti_camera(), cfg, trim);
  for (std::size_t i = 0; i < a.keyframes.size(); ++i)
    EXPECT_LT((a.keyframes[i].pose.matrix3x4() - b.keyframes[i].pose.matrix3x4()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Window, ReprojectionOnlyCostIsScaleBlind) {
  Window w = make_window(25, 5, 100, 0.3, 0.5);
  perturb(w, 5, 0.05, 0.01);
  WindowConfig cfg;
  cfg.use_depth = false;
  cfg.use_scale_regularizer = false;
  const double c1 = build_window_problem(w.keyframes, w.landmarks, test::kitti_camera(), cfg).problem.cost();
  for (auto& kf : w.keyframes) kf.pose = Pose(kf.pose.rotation(), 2.0 * kf.pose.translation());
  for (auto& l : w.landmarks) l.position *= 2.0;
  const double c2 = build_window_problem(w.keyframes, w.landmarks, test::kitti_camera(), cfg).problem.cost();
  EXPECT_NEAR(c1, c2, 1e-12 * std::max(1.0, c1));
}

TEST(Window, AutoBalanceMatchesClassMeans) {
  Window w = make_window(26, 5, 200, 0.3, 1.0);
  for (auto& l : w.landmarks)
    for (auto& o : l.observations)
      if (o.depth) *o.depth += 0.1;
  WindowConfig cfg;
  const auto wp = build_window_problem(w.keyframes, w.landmarks, test::kitti_camera(), cfg);
  const double rep = mean_block_cost(wp.problem, nlls::ResidualTag::Reprojection);
  const double dep = mean_block_cost(wp.problem, nlls::ResidualTag::Depth);
  EXPECT_LE(std::max(rep / dep, dep / rep), 2.0 + 1e-9);
  EXPECT_NE(wp.diag.w2, cfg.w2);
}

TEST(Window, AutoBalanceLeavesFittedClassesAlone) {
  // exact pixels on a uniformly scaled reconstruction: only depth disagrees
  Window w = make_window(27, 5, 200, 0.05);
  for (auto& kf : w.keyframes) kf.pose = Pose(kf.pose.rotation(), 1.05 * kf.pose.translation());
  for (auto& l : w.landmarks) l.position *= 1.05;
  WindowConfig cfg;
  auto trim = no_trim();
  trim.solver.max_iterations = 500;
  const auto diag = build_and_solve_window(w.keyframes, w.landmarks, test::kitti_camera(), cfg, trim);
  EXPECT_EQ(diag.w2, cfg.w2);
  const double est = (camera_center(w.keyframes.back().pose) - camera_center(w.keyframes.front().pose)).norm();
  const double truth = (camera_center(w.truth.back()) - camera_center(w.truth.front())).norm();
  EXPECT_NEAR(est / truth, 1.0, 0.005);
}

TEST(Window, TrimmingHelpsWithPlantedOutliers) {
  // 10% of the observations are outliers of 3-10 px, 10% of the depths are
  // biased by 0.5-2 m: large enough to pull the Cauchy loss, small enough not
  // to be ignored by it
  int trimmed_better_or_equal = 0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    Window w = make_window(100 + seed, 5, 150, 0.3, 0.1);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> mag(3, 10), ang(0, 2 * M_PI), bias(0.5, 2.0), u01(0, 1);
    for (auto& l : w.landmarks)
      for (auto& o : l.observations) {
        if (u01(rng) < 0.1) {
          const double a = ang(rng);
          o.pixel += mag(rng) * Vec2(std::cos(a), std::sin(a));
        }
        if (o.depth && u01(rng) < 0.1) *o.depth += bias(rng);
      }
    perturb(w, seed, 0.05, 0.005);
    Window plain = w;
    auto trim = nlls::TrimConfig{};
    trim.time_bound = 0;
    build_and_solve_window(w.keyframes, w.landmarks, test::kitti_camera(), WindowConfig{}, trim);
    build_and_solve_window(plain.keyframes, plain.landmarks, test::kitti_camera(), WindowConfig{}, no_trim());
    const double et = mean_translation_error(w.keyframes, w.truth);
    const double ep = mean_translation_error(plain.keyframes, plain.truth);
    if (et <= ep) ++trimmed_better_or_equal;
    else ADD_FAILURE() << "seed " << seed << " trimmed " << et << " plain " << ep;
  }
  EXPECT_EQ(trimmed_better_or_equal, 20);
}

TEST(Window, RejectsDegenerateInput) {
  Window w = make_window(27, 2, 10);
  std::vector<Keyframe> one{w.keyframes[0]};
  EXPECT_THROW(build_and_solve_window(one, w.landmarks, test::kitti_camera(), WindowConfig{}, no_trim()), Error);
  std::vector<Landmark> none;
  EXPECT_THROW(build_and_solve_window(w.keyframes, none, test::kitti_camera(), WindowConfig{}, no_trim()),
               EmptyProblem);
}

TEST(WindowConfig, Validation) {
  WindowConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.window_min = 12;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = WindowConfig{};
  cfg.middle_limit = 20;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
