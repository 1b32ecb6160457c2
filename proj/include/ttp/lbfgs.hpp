/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/lbfgs.hpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

namespace ttp {

struct LbfgsOptions
{
    int max_evals = 200;              ///< function+gradient evaluations, line search included
    double gradient_tolerance = 1e-9; ///< stop when |g| <= tol * max(1, |f|)
    int history_size = 10;
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    int max_line_search = 30;
};

enum class LbfgsStatus
{
    converged,
    max_evals,
    line_search_failure
};

struct LbfgsResult
{
    Eigen::VectorXd x;
    double f = 0.0;
    Eigen::VectorXd gradient;
    int evals = 0;
    int iterations = 0;
    LbfgsStatus status = LbfgsStatus::converged;

    bool converged() const noexcept { return status == LbfgsStatus::converged; }
};

namespace detail {

struct LinePoint
{
    double alpha = 0.0;
    double f = 0.0;
    double slope = 0.0; // directional derivative
    Eigen::VectorXd x;
    Eigen::VectorXd g;
};

// Minimiser of the cubic through (a, fa, da) and (b, fb, db), safeguarded
// into the inner 80% of the interval; bisection when the cubic is unusable.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db)
{
    const double lo = std::min(a, b);
    const double hi = std::max(a, b);
    const double margin = 0.1 * (hi - lo);
    const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - da * db;
    double step = 0.5 * (a + b);
    if (disc >= 0.0) {
        const double d2 = std::copysign(std::sqrt(disc), b - a);
        const double denom = db - da + 2.0 * d2;
        if (denom != 0.0) {
            const double candidate = b - (b - a) * (db + d2 - d1) / denom;
            if (std::isfinite(candidate)) {
                step = candidate;
            }
        }
    }
    return std::clamp(step, lo + margin, hi - margin);
}

} // namespace detail

/**
 * Limited-memory BFGS with a strong-Wolfe line search. `fn(x, g)` returns
 * f(x) and writes the gradient into g. Every accepted step satisfies the
 * sufficient-decrease condition, so f never increases. A failed line search
 * is reported through the status with the last accepted iterate.
 */
template <class Fn>
LbfgsResult lbfgs_minimize(Fn&& fn, const Eigen::VectorXd& x0, const LbfgsOptions& options = {})
{
    LbfgsResult res;
    res.x = x0;
    res.gradient.resize(x0.size());
    res.f = fn(res.x, res.gradient);
    res.evals = 1;
    auto small_gradient = [&](double f, const Eigen::VectorXd& g) {
        return g.norm() <= options.gradient_tolerance * std::max(1.0, std::abs(f));
    };
    if (small_gradient(res.f, res.gradient)) {
        res.status = LbfgsStatus::converged;
        return res;
    }

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;
    auto evaluate = [&](const Eigen::VectorXd& base, const Eigen::VectorXd& dir, double alpha) {
        detail::LinePoint p;
        p.alpha = alpha;
        p.x = base + alpha * dir;
        p.g.resize(base.size());
        p.f = fn(p.x, p.g);
        p.slope = p.g.dot(dir);
        ++res.evals;
        return p;
    };

    while (true) {
        if (res.evals >= options.max_evals) {
            res.status = LbfgsStatus::max_evals;
            return res;
        }
        // Two-loop recursion for d = -H g.
        Eigen::VectorXd q = res.gradient;
        std::vector<double> alpha_hist(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha_hist[k] = rho_hist[k] * s_hist[k].dot(q);
            q -= alpha_hist[k] * y_hist[k];
        }
        double initial_step = 1.0;
        if (!s_hist.empty()) {
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        } else {
            initial_step = 1.0 / std::max(1.0, res.gradient.norm());
        }
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = rho_hist[k] * y_hist[k].dot(q);
            q += (alpha_hist[k] - beta) * s_hist[k];
        }
        Eigen::VectorXd dir = -q;
        double slope0 = res.gradient.dot(dir);
        if (!(slope0 < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -res.gradient;
            slope0 = res.gradient.dot(dir);
            initial_step = 1.0 / std::max(1.0, res.gradient.norm());
        }

        // Strong-Wolfe bracketing followed by zoom.
        const double f0 = res.f;
        const double c1 = options.wolfe_c1;
        const double c2 = options.wolfe_c2;
        auto curvature = [&](const detail::LinePoint& p) { return std::abs(p.slope) <= -c2 * slope0; };
        // Once function differences reach round-off, sufficient decrease is judged
        // from the slope instead (approximate Wolfe condition).
        const double noise = 1e-10 * std::abs(f0);
        auto armijo = [&](const detail::LinePoint& p) {
            return p.f <= f0 + c1 * p.alpha * slope0 || (p.f <= f0 + noise && p.slope <= (2.0 * c1 - 1.0) * slope0);
        };
        auto rises = [&](const detail::LinePoint& p, const detail::LinePoint& ref) {
            return std::abs(p.f - ref.f) <= noise ? p.slope >= 0.0 && !curvature(p) : p.f >= ref.f;
        };

        detail::LinePoint prev;
        prev.alpha = 0.0;
        prev.f = f0;
        prev.slope = slope0;
        prev.x = res.x;
        prev.g = res.gradient;
        detail::LinePoint accepted;
        bool found = false;
        detail::LinePoint lo, hi;
        bool zoom = false;
        double alpha = initial_step;
        for (int ls = 0; ls < options.max_line_search && res.evals < options.max_evals; ++ls) {
            detail::LinePoint cur = evaluate(res.x, dir, alpha);
            if (!std::isfinite(cur.f) || !armijo(cur) || (ls > 0 && rises(cur, prev))) {
                lo = prev;
                hi = cur;
                zoom = true;
                break;
            }
            if (curvature(cur)) {
                accepted = cur;
                found = true;
                break;
            }
            if (cur.slope >= 0.0) {
                lo = cur;
                hi = prev;
                zoom = true;
                break;
            }
            prev = cur;
            alpha *= 2.0;
        }
        if (!found && !zoom && prev.alpha > 0.0) {
            // Budget ran out while still expanding; prev satisfies sufficient decrease.
            accepted = prev;
            found = true;
        }
        if (zoom) {
            for (int ls = 0; ls < options.max_line_search && res.evals < options.max_evals; ++ls) {
                if (std::abs(hi.alpha - lo.alpha) <= 1e-16 * std::max(1.0, lo.alpha)) {
                    break;
                }
                const bool hi_usable = std::isfinite(hi.f) && std::isfinite(hi.slope);
                const double a = hi_usable ? detail::cubic_step(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope)
                                           : 0.5 * (lo.alpha + hi.alpha);
                detail::LinePoint cur = evaluate(res.x, dir, a);
                if (!std::isfinite(cur.f) || !armijo(cur) || rises(cur, lo)) {
                    hi = cur;
                } else {
                    if (curvature(cur)) {
                        accepted = cur;
                        found = true;
                        break;
                    }
                    if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) {
                        hi = lo;
                    }
                    lo = cur;
                }
            }
            if (!found && lo.alpha > 0.0 && armijo(lo)) {
                // Sufficient decrease without the curvature condition.
                accepted = lo;
                found = true;
            }
        }
        if (!found) {
            res.status = small_gradient(res.f, res.gradient) ? LbfgsStatus::converged
                         : res.evals >= options.max_evals ? LbfgsStatus::max_evals
                                                          : LbfgsStatus::line_search_failure;
            return res;
        }

        const Eigen::VectorXd s = accepted.x - res.x;
        const Eigen::VectorXd y = accepted.g - res.gradient;
        res.x = accepted.x;
        res.f = accepted.f;
        res.gradient = accepted.g;
        ++res.iterations;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > options.history_size) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        if (small_gradient(res.f, res.gradient)) {
            res.status = LbfgsStatus::converged;
            return res;
        }
    }
}

} // namespace ttp
