#include <algorithm>
#include <cmath>

#include "endorkit/numerics.hpp"

namespace endorkit {

namespace {

constexpr double kMaxLambda = 1e20;

double norm2(std::span<const double> r) {
  double acc = 0.0;
  for (double x : r) acc += x * x;
  return acc;
}

bool all_finite(std::span<const double> r) {
  return std::all_of(r.begin(), r.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double LeastSquaresResult::sigma(std::size_t i) const {
  if (i >= covariance.rows()) return 0.0;
  return std::sqrt(std::max(0.0, covariance(i, i)));
}

RealMatrix numeric_jacobian(const ResidualFunction& model, std::span<const double> params,
                            std::span<const ParameterBounds> bounds, double rel_step,
                            std::span<const double> r0) {
  const std::size_t n = params.size();
  const std::size_t m = r0.size();
  RealMatrix jac(m, n);
  std::vector<double> p(params.begin(), params.end());
  for (std::size_t j = 0; j < n; ++j) {
    double h = rel_step * std::abs(p[j]);
    if (h == 0.0) h = rel_step;
    if (j < bounds.size() && p[j] + h > bounds[j].upper) h = -h;
    const double saved = p[j];
    p[j] = saved + h;
    h = p[j] - saved;  // exactly representable step
    const std::vector<double> r = model(p);
    p[j] = saved;
    if (r.size() != m) throw std::invalid_argument("least_squares: residual length changed");
    if (!all_finite(r)) throw DivergedError("least_squares: non-finite residual in Jacobian evaluation");
    for (std::size_t i = 0; i < m; ++i) jac(i, j) = (r[i] - r0[i]) / h;
  }
  return jac;
}

LeastSquaresResult least_squares(const ResidualFunction& model, std::vector<double> init,
                                 std::span<const ParameterBounds> bounds,
                                 const LeastSquaresOptions& options) {
  const std::size_t n = init.size();
  if (!bounds.empty() && bounds.size() != n)
    throw std::invalid_argument("least_squares: bounds length differs from parameter count");
  for (std::size_t j = 0; j < bounds.size(); ++j)
    if (!bounds[j].contains(init[j]))
      throw std::invalid_argument("least_squares: initial parameter " + std::to_string(j) +
                                  " lies outside its bounds");

  auto clamp = [&](std::vector<double>& p) {
    for (std::size_t j = 0; j < bounds.size(); ++j)
      p[j] = std::clamp(p[j], bounds[j].lower, bounds[j].upper);
  };

  LeastSquaresResult result;
  std::vector<double> p = std::move(init);
  std::vector<double> r = model(p);
  if (!all_finite(r)) throw std::invalid_argument("least_squares: residuals are not finite at init");
  const std::size_t m = r.size();
  result.n_residuals = m;
  double cost = norm2(r);
  result.residual_history.push_back(std::sqrt(cost));

  double lambda = options.initial_lambda;
  bool converged = cost == 0.0;
  int iter = 0;
  while (!converged && iter < options.max_iterations) {
    ++iter;
    const RealMatrix jac = numeric_jacobian(model, p, bounds, options.jacobian_step, r);
    RealMatrix jtj(n, n);
    std::vector<double> grad(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t a = 0; a < n; ++a) {
        const double ja = jac(i, a);
        if (ja == 0.0) continue;
        grad[a] += ja * r[i];
        for (std::size_t b = 0; b < n; ++b) jtj(a, b) += ja * jac(i, b);
      }

    std::vector<double> diag(n);
    double max_diag = 0.0;
    for (std::size_t a = 0; a < n; ++a) max_diag = std::max(max_diag, jtj(a, a));
    for (std::size_t a = 0; a < n; ++a) diag[a] = std::max(jtj(a, a), 1e-12 * max_diag + 1e-300);

    // Gradient test: cosine between residual and every Jacobian column.
    double gcos = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      gcos = std::max(gcos, std::abs(grad[a]) / std::sqrt(diag[a] * cost));
    if (gcos <= 1e-15) {
      converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      RealMatrix lhs = jtj;
      for (std::size_t a = 0; a < n; ++a) lhs(a, a) += lambda * diag[a];
      std::vector<double> rhs(n);
      for (std::size_t a = 0; a < n; ++a) rhs[a] = -grad[a];
      std::vector<double> step;
      try {
        step = solve_linear(lhs, rhs);
      } catch (const std::domain_error&) {
        lambda *= 10.0;
        if (lambda > kMaxLambda) break;
        continue;
      }
      std::vector<double> trial(n);
      for (std::size_t a = 0; a < n; ++a) trial[a] = p[a] + step[a];
      clamp(trial);
      for (std::size_t a = 0; a < n; ++a) step[a] = trial[a] - p[a];

      std::vector<double> r_trial = model(trial);
      if (r_trial.size() != m) throw std::invalid_argument("least_squares: residual length changed");
      if (!all_finite(r_trial)) throw DivergedError("least_squares: residuals became non-finite");
      const double trial_cost = norm2(r_trial);
      if (trial_cost < cost) {
        // Predicted reduction from the linearized model.
        double lin = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          double ri = r[i];
          for (std::size_t a = 0; a < n; ++a) ri += jac(i, a) * step[a];
          lin += ri * ri;
        }
        const double actual_rel = (cost - trial_cost) / cost;
        const double predicted_rel = std::max(0.0, (cost - lin) / cost);
        double step_norm = 0.0, x_norm = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
          const double d = std::sqrt(diag[a]);
          step_norm += (d * step[a]) * (d * step[a]);
          x_norm += (d * trial[a]) * (d * trial[a]);
        }
        p = std::move(trial);
        r = std::move(r_trial);
        cost = trial_cost;
        result.residual_history.push_back(std::sqrt(cost));
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (cost == 0.0 || std::sqrt(step_norm) <= options.x_tolerance * std::sqrt(x_norm) ||
            (actual_rel <= options.f_tolerance && predicted_rel <= options.f_tolerance))
          converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > kMaxLambda) break;
      }
    }
    if (!accepted) {
      // No descent direction left at working precision: the current point is
      // a minimum to machine accuracy.
      converged = true;
      break;
    }
  }

  result.params = p;
  result.iterations = iter;
  result.converged = converged;
  result.residual_norm = std::sqrt(cost);

  const RealMatrix jac = numeric_jacobian(model, p, bounds, options.jacobian_step, r);
  RealMatrix jtj(n, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) jtj(a, b) += jac(i, a) * jac(i, b);
  PseudoInverse pinv = symmetric_pseudo_inverse(jtj);
  result.rank = pinv.rank;
  const double dof = m > n ? static_cast<double>(m - n) : 0.0;
  const double sigma2 = dof > 0.0 ? cost / dof : 0.0;
  result.covariance = pinv.inverse * sigma2;
  return result;
}

}  // namespace endorkit
