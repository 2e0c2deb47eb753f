#pragma once

// Levenberg-Marquardt over a sparse Gauss-Newton system and the trimmed
// schedule that interleaves iterations with removal of the largest residual
// blocks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "lidarvo/nlls/problem.hpp"

namespace lidarvo::nlls {

struct SolverOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;
  double parameter_tolerance = 1e-12;
  double function_tolerance = 1e-12;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 2.0;
  double max_lambda = 1e16;
  /// Wall-clock budget in seconds; <= 0 means unbounded.
  double time_bound = 0.0;
  /// Per-iteration diagnostic log: iteration, cost, lambda, residual count.
  std::ostream* log = nullptr;
};

enum class Termination {
  GradientTolerance,
  ParameterTolerance,
  FunctionTolerance,
  MaxIterations,
  TimeBound,
  NoFreeParameters,
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::ParameterTolerance: return "parameter_tolerance";
    case Termination::FunctionTolerance: return "function_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::TimeBound: return "time_bound";
    case Termination::NoFreeParameters: return "no_free_parameters";
  }
  return "?";
}

struct SolverSummary {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int successful_steps = 0;
  Termination termination = Termination::MaxIterations;
  std::vector<ResidualId> removed_residuals;
  std::vector<ParameterId> removed_parameters;
};

struct TrimConfig {
  /// Iterations run before each trimming stage.
  std::vector<int> steps{5, 5};
  /// Percentage of depth and of reprojection blocks removed per stage.
  double rejection_percent = 10.0;
  /// Seconds for the whole trimmed solve; <= 0 means unbounded.
  double time_bound = 0.1;
  /// Window problems have flat directions (distant landmarks), so the
  /// stopping tolerances are looser than the plain solver's.
  SolverOptions solver = [] {
    SolverOptions o;
    o.function_tolerance = 1e-9;
    o.parameter_tolerance = 1e-10;
    return o;
  }();

  void validate() const {
    if (steps.empty()) throw Error("trim steps must not be empty");
    if (!(rejection_percent >= 0.0 && rejection_percent < 50.0))
      throw Error("rejection percent must lie in [0, 50)");
    for (int s : steps)
      if (s < 0) throw Error("trim steps must be non-negative");
  }
};

class LevenbergMarquardt {
 public:
  using Clock = std::chrono::steady_clock;

  LevenbergMarquardt(Problem& problem, const SolverOptions& options)
      : problem_(problem), options_(options), lambda_(options.initial_lambda) {}

  /// Iterates until convergence, until the total iteration count reaches
  /// `iteration_limit`, or until the deadline passes.
  void run_until(int iteration_limit, std::optional<Clock::time_point> deadline = {}) {
    if (!structure_valid_) build_structure();
    if (converged_) return;
    if (num_columns_ == 0) {
      summary_.termination = Termination::NoFreeParameters;
      summary_.final_cost = problem_.cost();
      converged_ = true;
      return;
    }
    while (!converged_) {
      if (summary_.iterations >= iteration_limit) {
        summary_.termination = Termination::MaxIterations;
        return;
      }
      if (deadline && Clock::now() >= *deadline) {
        summary_.termination = Termination::TimeBound;
        return;
      }
      if (!linearized_) {
        linearize();
        if (!started_) {
          summary_.initial_cost = cost_;
          started_ = true;
        }
        summary_.final_cost = cost_;
        if (gradient_.size() == 0 || gradient_.cwiseAbs().maxCoeff() <= options_.gradient_tolerance) {
          finish(Termination::GradientTolerance);
          return;
        }
      }
      step();
    }
  }

  /// Must be called after residual or parameter blocks were removed.
  void structure_changed() {
    structure_valid_ = false;
    linearized_ = false;
    converged_ = false;
  }

  bool converged() const { return converged_; }
  double lambda() const { return lambda_; }
  SolverSummary& summary() { return summary_; }

 private:
  struct PairSlot {
    int row_block;  // position of the row parameter in the residual block
    int col_block;
  };
  struct ActiveResidual {
    ResidualId id;
    std::vector<int> local_offset;     // column offset of each parameter in the local Jacobian
    std::vector<PairSlot> slots;
    std::vector<std::vector<int>> column_starts;  // per slot, per tangent column
  };

  void finish(Termination t) {
    summary_.termination = t;
    converged_ = true;
  }

  void build_structure() {
    const auto& params = problem_.parameters();
    column_offset_.assign(params.size(), -1);
    variables_.clear();
    num_columns_ = 0;
    std::vector<char> referenced(params.size(), 0);
    for (const auto& r : problem_.residuals()) {
      if (r.removed) continue;
      for (ParameterId p : r.parameters) referenced[p] = 1;
    }
    for (ParameterId p = 0; p < params.size(); ++p) {
      if (params[p].removed || params[p].constant || !referenced[p]) continue;
      column_offset_[p] = num_columns_;
      num_columns_ += params[p].tangent_size();
      variables_.push_back(p);
    }
    if (problem_.num_active_residuals() == 0) throw EmptyProblem("problem has no residual blocks");

    // Lower-triangular block pattern: rows of parameter a in the columns of
    // parameter b whenever offset(a) >= offset(b) and both share a residual.
    std::vector<std::vector<ParameterId>> rows_of(params.size());
    active_.clear();
    for (ResidualId id = 0; id < problem_.residuals().size(); ++id) {
      const ResidualBlock& r = problem_.residuals()[id];
      if (r.removed) continue;
      ActiveResidual a;
      a.id = id;
      int local = 0;
      for (ParameterId p : r.parameters) {
        a.local_offset.push_back(local);
        local += params[p].local_size();
      }
      for (ParameterId pa : r.parameters) {
        if (column_offset_[pa] < 0) continue;
        for (ParameterId pb : r.parameters) {
          if (column_offset_[pb] < 0 || column_offset_[pa] < column_offset_[pb]) continue;
          rows_of[pb].push_back(pa);
        }
      }
      active_.push_back(std::move(a));
    }
    std::vector<int> outer(num_columns_ + 1, 0);
    std::vector<int> inner;
    // For every (row parameter, col parameter) pair: start of the row block in
    // each column of the col parameter.
    block_start_.assign(params.size(), {});
    for (ParameterId pb : variables_) {
      auto& rows = rows_of[pb];
      std::sort(rows.begin(), rows.end(), [&](ParameterId x, ParameterId y) {
        return column_offset_[x] < column_offset_[y];
      });
      rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
      const int width = params[pb].tangent_size();
      for (int k = 0; k < width; ++k) {
        const int col = column_offset_[pb] + k;
        outer[col] = static_cast<int>(inner.size());
        for (ParameterId pa : rows) {
          block_start_[pb].emplace_back(pa, static_cast<int>(inner.size()));
          for (int i = 0; i < params[pa].tangent_size(); ++i) inner.push_back(column_offset_[pa] + i);
        }
      }
    }
    outer[num_columns_] = static_cast<int>(inner.size());

    hessian_.resize(num_columns_, num_columns_);
    hessian_.resizeNonZeros(static_cast<Eigen::Index>(inner.size()));
    std::copy(outer.begin(), outer.end(), hessian_.outerIndexPtr());
    std::copy(inner.begin(), inner.end(), hessian_.innerIndexPtr());
    std::fill_n(hessian_.valuePtr(), inner.size(), 0.0);
    diagonal_index_.assign(num_columns_, -1);
    for (int col = 0; col < num_columns_; ++col) {
      for (int k = outer[col]; k < outer[col + 1]; ++k) {
        if (inner[k] == col) diagonal_index_[col] = k;
      }
    }

    for (ActiveResidual& a : active_) {
      const ResidualBlock& r = problem_.residuals()[a.id];
      for (std::size_t ia = 0; ia < r.parameters.size(); ++ia) {
        const ParameterId pa = r.parameters[ia];
        if (column_offset_[pa] < 0) continue;
        for (std::size_t ib = 0; ib < r.parameters.size(); ++ib) {
          const ParameterId pb = r.parameters[ib];
          if (column_offset_[pb] < 0 || column_offset_[pa] < column_offset_[pb]) continue;
          std::vector<int> starts;
          const auto& entries = block_start_[pb];
          const int width = params[pb].tangent_size();
          const std::size_t rows_per_col = entries.size() / static_cast<std::size_t>(width);
          for (int k = 0; k < width; ++k) {
            for (std::size_t e = 0; e < rows_per_col; ++e) {
              const auto& [row_param, start] = entries[k * rows_per_col + e];
              if (row_param == pa) {
                starts.push_back(start);
                break;
              }
            }
          }
          a.slots.push_back({static_cast<int>(ia), static_cast<int>(ib)});
          a.column_starts.push_back(std::move(starts));
        }
      }
    }

    solver_.analyzePattern(hessian_);
    damped_ = hessian_;
    structure_valid_ = true;
    linearized_ = false;
  }

  /// Jacobian of the local increment with respect to the tangent increment.
  static Eigen::MatrixXd tangent_basis(const ParameterBlock& p) {
    if (p.kind != ParameterKind::PoseFixedTranslationNorm) {
      return Eigen::MatrixXd::Identity(p.local_size(), p.tangent_size());
    }
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(6, 5);
    b.topLeftCorner<3, 3>().setIdentity();
    b.block<3, 2>(3, 3) = translation_basis(p.pose->translation());
    return b;
  }

  static Eigen::Matrix<double, 3, 2> translation_basis(const Vec3& t) {
    const Vec3 dir = t.norm() > 0.0 ? Vec3(t.normalized()) : Vec3::UnitZ();
    const Vec3 helper = std::abs(dir.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 e1 = dir.cross(helper).normalized();
    const Vec3 e2 = dir.cross(e1);
    Eigen::Matrix<double, 3, 2> b;
    b << e1, e2;
    return b;
  }

  void linearize() {
    const auto& params = problem_.parameters();
    std::fill_n(hessian_.valuePtr(), hessian_.nonZeros(), 0.0);
    gradient_ = Eigen::VectorXd::Zero(num_columns_);
    cost_ = 0.0;

    std::vector<Eigen::MatrixXd> bases(params.size());
    for (ParameterId p : variables_) bases[p] = tangent_basis(params[p]);

    std::vector<ParameterView> views;
    Eigen::VectorXd r;
    Eigen::MatrixXd j_local;
    std::vector<Eigen::MatrixXd> j_tangent;
    for (const ActiveResidual& a : active_) {
      const ResidualBlock& block = problem_.residuals()[a.id];
      views.clear();
      for (ParameterId p : block.parameters) views.push_back(params[p].view());
      r.resize(block.cost->num_residuals());
      if (!block.cost->evaluate(views, r.data(), &j_local) || !r.allFinite() || !j_local.allFinite())
        throw NumericalFailure("residual block " + std::to_string(a.id) +
                               " is undefined at the current parameters");

      const double sq = r.squaredNorm();
      const Eigen::Vector3d rho = block.loss.evaluate(sq);
      cost_ += 0.5 * block.weight * rho(0);
      const double sqrt_w = std::sqrt(block.weight);
      const double sqrt_rho1 = std::sqrt(rho(1));
      double residual_scaling = sqrt_rho1;
      double alpha_sq_norm = 0.0;
      if (sq > 0.0 && rho(2) > 0.0) {
        const double alpha = 1.0 - std::sqrt(1.0 + 2.0 * sq * rho(2) / rho(1));
        residual_scaling = sqrt_rho1 / (1.0 - alpha);
        alpha_sq_norm = alpha / sq;
      }
      Eigen::MatrixXd j = j_local;
      if (alpha_sq_norm != 0.0) j -= alpha_sq_norm * r * (r.transpose() * j_local);
      j *= sqrt_w * sqrt_rho1;
      const Eigen::VectorXd rs = (sqrt_w * residual_scaling) * r;

      j_tangent.assign(block.parameters.size(), Eigen::MatrixXd());
      for (std::size_t i = 0; i < block.parameters.size(); ++i) {
        const ParameterId p = block.parameters[i];
        if (column_offset_[p] < 0) continue;
        const auto cols = j.middleCols(a.local_offset[i], params[p].local_size());
        if (params[p].kind == ParameterKind::PoseFixedTranslationNorm) {
          j_tangent[i] = cols * bases[p];
        } else {
          j_tangent[i] = cols;
        }
        gradient_.segment(column_offset_[p], params[p].tangent_size()) += j_tangent[i].transpose() * rs;
      }
      double* values = hessian_.valuePtr();
      for (std::size_t s = 0; s < a.slots.size(); ++s) {
        const auto& ja = j_tangent[a.slots[s].row_block];
        const auto& jb = j_tangent[a.slots[s].col_block];
        const Eigen::MatrixXd h = ja.transpose() * jb;
        for (Eigen::Index k = 0; k < h.cols(); ++k) {
          double* dst = values + a.column_starts[s][k];
          for (Eigen::Index i = 0; i < h.rows(); ++i) dst[i] += h(i, k);
        }
      }
    }
    linearized_ = true;
  }

  void apply_step(const Eigen::VectorXd& delta) {
    auto& params = problem_.parameters();
    for (ParameterId p : variables_) {
      const ParameterBlock& b = params[p];
      const auto d = delta.segment(column_offset_[p], b.tangent_size());
      switch (b.kind) {
        case ParameterKind::Vector:
          for (int i = 0; i < b.size; ++i) b.values[i] += d(i);
          break;
        case ParameterKind::Pose:
          *b.pose = b.pose->retract(d);
          break;
        case ParameterKind::PoseFixedTranslationNorm: {
          const Eigen::Matrix<double, 3, 2> basis = translation_basis(b.pose->translation());
          Vec6 local;
          local.head<3>() = d.head<3>();
          local.tail<3>() = basis * d.tail<2>();
          Pose moved = b.pose->retract(local);
          Vec3 t = moved.translation();
          t = t.norm() > 0.0 && b.translation_norm > 0.0 ? Vec3(b.translation_norm * t.normalized())
                                                         : Vec3::Zero();
          *b.pose = Pose::from_translation(t - moved.translation()) * moved;
          break;
        }
      }
    }
  }

  void save_state() {
    const auto& params = problem_.parameters();
    saved_poses_.clear();
    saved_values_.clear();
    for (ParameterId p : variables_) {
      const ParameterBlock& b = params[p];
      if (b.kind == ParameterKind::Vector) {
        saved_values_.insert(saved_values_.end(), b.values, b.values + b.size);
      } else {
        saved_poses_.push_back(*b.pose);
      }
    }
  }

  void restore_state() {
    auto& params = problem_.parameters();
    std::size_t iv = 0;
    std::size_t ip = 0;
    for (ParameterId p : variables_) {
      const ParameterBlock& b = params[p];
      if (b.kind == ParameterKind::Vector) {
        std::copy_n(saved_values_.begin() + static_cast<std::ptrdiff_t>(iv), b.size, b.values);
        iv += static_cast<std::size_t>(b.size);
      } else {
        *b.pose = saved_poses_[ip++];
      }
    }
  }

  double parameter_norm() const {
    double sum = 0.0;
    for (ParameterId p : variables_) {
      const ParameterBlock& b = problem_.parameters()[p];
      if (b.kind == ParameterKind::Vector) {
        for (int i = 0; i < b.size; ++i) sum += b.values[i] * b.values[i];
      } else {
        sum += b.pose->translation().squaredNorm() + 3.0;
      }
    }
    return std::sqrt(sum);
  }

  void step() {
    ++summary_.iterations;
    const double* h = hessian_.valuePtr();
    double* d = damped_.valuePtr();
    std::copy_n(h, hessian_.nonZeros(), d);
    for (int col = 0; col < num_columns_; ++col) {
      const int k = diagonal_index_[col];
      d[k] += lambda_ * std::clamp(h[k], 1e-6, 1e32);
    }
    solver_.factorize(damped_);
    Eigen::VectorXd delta;
    if (solver_.info() == Eigen::Success) delta = -solver_.solve(gradient_);
    if (solver_.info() != Eigen::Success || !delta.allFinite()) {
      increase_lambda();
      log_iteration(false);
      return;
    }
    const double x_norm = parameter_norm();
    if (delta.norm() <= options_.parameter_tolerance * (x_norm + options_.parameter_tolerance)) {
      log_iteration(false);
      finish(Termination::ParameterTolerance);
      return;
    }
    save_state();
    apply_step(delta);
    const double new_cost = problem_.cost();
    if (std::isfinite(new_cost) && new_cost < cost_) {
      const double decrease = cost_ - new_cost;
      ++summary_.successful_steps;
      lambda_ = std::max(lambda_ / options_.lambda_down, 1e-16);
      summary_.final_cost = new_cost;
      const double old_cost = cost_;
      cost_ = new_cost;
      linearized_ = false;
      log_iteration(true);
      if (decrease <= options_.function_tolerance * old_cost) finish(Termination::FunctionTolerance);
    } else {
      restore_state();
      increase_lambda();
      log_iteration(false);
    }
  }

  void increase_lambda() {
    lambda_ *= options_.lambda_up;
    if (lambda_ > options_.max_lambda)
      throw NumericalFailure("damping exceeded its limit without a descent step");
  }

  void log_iteration(bool accepted) {
    if (options_.log == nullptr) return;
    *options_.log << summary_.iterations << ' ' << cost_ << ' ' << lambda_ << ' '
                  << problem_.num_active_residuals() << (accepted ? "" : " rejected") << '\n';
  }

  Problem& problem_;
  SolverOptions options_;
  double lambda_;
  double cost_ = 0.0;
  bool structure_valid_ = false;
  bool linearized_ = false;
  bool converged_ = false;
  bool started_ = false;
  int num_columns_ = 0;
  std::vector<int> column_offset_;
  std::vector<ParameterId> variables_;
  std::vector<ActiveResidual> active_;
  std::vector<std::vector<std::pair<ParameterId, int>>> block_start_;
  std::vector<int> diagonal_index_;
  Eigen::SparseMatrix<double> hessian_;
  Eigen::SparseMatrix<double> damped_;
  Eigen::VectorXd gradient_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> solver_;
  std::vector<Pose> saved_poses_;
  std::vector<double> saved_values_;
  SolverSummary summary_;
};

inline std::optional<LevenbergMarquardt::Clock::time_point> deadline_after(double seconds) {
  if (seconds <= 0.0) return std::nullopt;
  return LevenbergMarquardt::Clock::now() +
         std::chrono::duration_cast<LevenbergMarquardt::Clock::duration>(
             std::chrono::duration<double>(seconds));
}

/// Plain robust Levenberg-Marquardt until a tolerance, the iteration cap or
/// the time bound is reached. The final cost never exceeds the initial cost.
inline SolverSummary solve_lm(Problem& problem, const SolverOptions& options = {}) {
  LevenbergMarquardt lm(problem, options);
  lm.run_until(options.max_iterations, deadline_after(options.time_bound));
  return lm.summary();
}

/// Removes the floor(percent * n / 100) blocks of `tag` with the largest raw
/// residual norms (ties broken by lower block id first).
inline std::vector<ResidualId> trim_residuals(Problem& problem, ResidualTag tag, double percent) {
  std::vector<std::pair<double, ResidualId>> ranked;
  for (ResidualId id = 0; id < problem.residuals().size(); ++id) {
    const ResidualBlock& r = problem.residuals()[id];
    if (r.removed || r.tag != tag) continue;
    ranked.emplace_back(problem.residual_vector(id).norm(), id);
  }
  const auto count = static_cast<std::size_t>(
      std::floor(percent * static_cast<double>(ranked.size()) / 100.0 + 1e-9));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<ResidualId> removed;
  for (std::size_t i = 0; i < count && i < ranked.size(); ++i) {
    problem.remove_residual(ranked[i].second);
    removed.push_back(ranked[i].second);
  }
  return removed;
}

/// For each stage s: run s iterations, drop the largest depth and
/// reprojection residuals, drop parameters left without residuals. Then
/// optimize until convergence or the time bound.
inline SolverSummary solve_trimmed(Problem& problem, const TrimConfig& trim) {
  trim.validate();
  const auto deadline = deadline_after(trim.time_bound);
  LevenbergMarquardt lm(problem, trim.solver);
  int limit = 0;
  std::vector<ResidualId> removed_residuals;
  std::vector<ParameterId> removed_parameters;
  for (int s : trim.steps) {
    limit = std::min(limit + s, trim.solver.max_iterations);
    lm.run_until(limit, deadline);
    auto depth = trim_residuals(problem, ResidualTag::Depth, trim.rejection_percent);
    auto reproj = trim_residuals(problem, ResidualTag::Reprojection, trim.rejection_percent);
    if (depth.empty() && reproj.empty()) continue;
    removed_residuals.insert(removed_residuals.end(), depth.begin(), depth.end());
    removed_residuals.insert(removed_residuals.end(), reproj.begin(), reproj.end());
    const auto orphans = problem.remove_orphan_parameters();
    removed_parameters.insert(removed_parameters.end(), orphans.begin(), orphans.end());
    if (problem.num_active_residuals() == 0)
      throw EmptyProblem("trimming removed every residual block");
    lm.structure_changed();
  }
  lm.run_until(trim.solver.max_iterations, deadline);
  SolverSummary summary = lm.summary();
  summary.final_cost = problem.cost();
  summary.removed_residuals = std::move(removed_residuals);
  summary.removed_parameters = std::move(removed_parameters);
  return summary;
}

}  // namespace lidarvo::nlls
