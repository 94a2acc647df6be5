#include "hpalf/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace hpalf {

namespace {

double vec_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void check_distribution(const std::vector<double>& v, const char* what) {
  for (double x : v)
    require(x >= 0.0, ErrorCode::config, std::string(what) + ": negative entry");
  require(std::abs(vec_sum(v) - 1.0) <= 1e-12, ErrorCode::config,
          std::string(what) + ": does not sum to 1");
}

std::vector<double> project_simplex(std::vector<double> v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  int rho = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    css += u[i];
    const double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) {
      rho = static_cast<int>(i + 1);
      tau = t;
    }
  }
  (void)rho;
  for (double& x : v) x = std::max(0.0, x - tau);
  return v;
}

// Bounded gradient: the denominator floor keeps tiny coordinates from
// producing astronomic steps while staying exact wherever d is near its
// optimum c.
void neg_log_gradient(const std::vector<double>& c, const std::vector<double>& d,
                      std::vector<double>* g) {
  g->resize(c.size());
  for (size_t i = 0; i < c.size(); ++i)
    (*g)[i] = -c[i] / std::max(d[i], 1e-3 * c[i] + 1e-300);
}

}  // namespace

void DiscreteWorld::validate() const {
  require(!p_data.empty() && p_data.size() == p_g.size(), ErrorCode::dimension,
          "DiscreteWorld: p_data/p_g size mismatch");
  require(r1.outcomes() == r0.outcomes() && r1.outcomes() >= 2, ErrorCode::dimension,
          "DiscreteWorld: anchor size mismatch");
  check_distribution(p_data, "p_data");
  check_distribution(p_g, "p_g");
  check_distribution(r1.probs, "R1");
  check_distribution(r0.probs, "R0");
}

DiscreteWorld make_random_world(Rng& rng, int n_x, int outcomes) {
  require(n_x >= 1 && n_x <= 8, ErrorCode::config, "make_random_world: n_x out of range");
  auto draw_dist = [&](int n, double lo) {
    std::vector<double> v(n);
    double s = 0.0;
    for (double& x : v) {
      x = rng.uniform(lo, 1.0);
      s += x;
    }
    for (double& x : v) x /= s;
    return v;
  };
  DiscreteWorld w;
  w.p_data = draw_dist(n_x, 0.2);  // point masses >= 0.2/n
  w.p_g = draw_dist(n_x, 0.2);
  w.r1.skew_sign = +1;
  w.r1.probs = draw_dist(outcomes, 0.15);  // entries >= 0.015 at K=10
  w.r0.skew_sign = -1;
  w.r0.probs = draw_dist(outcomes, 0.15);
  return w;
}

ClosedFormD optimal_d_closed_form(const DiscreteWorld& world, int x) {
  require(x >= 0 && x < world.points(), ErrorCode::dimension, "optimal_d_closed_form: bad x");
  const double pd = world.p_data[x], pg = world.p_g[x];
  require(pd + pg > 0.0, ErrorCode::config,
          "optimal_d_closed_form: undefined point (both masses zero)");
  const int K = world.outcomes();
  ClosedFormD out;
  out.d_star.resize(K);
  out.mixture.resize(K);
  for (int v = 0; v < K; ++v) {
    out.mixture[v] = (world.r1.probs[v] * pd + world.r0.probs[v] * pg) / (pd + pg);
    out.d_star[v] = pd / (pd + pg) + out.mixture[v];
  }
  return out;
}

namespace {

// Entropic mirror descent with a decrease guard. Multiplicative updates keep
// the iterate strictly inside the simplex, which copes with extremely skewed
// weight vectors (entries spanning many decades) where projected gradient
// steps would pin the step size to a boundary coordinate.
NumericOptimum mirror_descent_neg_log(const std::vector<double>& c, int max_iters) {
  const int K = static_cast<int>(c.size());
  std::vector<double> d(K, 1.0 / K), cand(K), logw(K);
  auto objective = [&](const std::vector<double>& x) {
    double f = 0.0;
    for (int i = 0; i < K; ++i) {
      if (c[i] < 1e-18) continue;  // below double resolution of f
      if (x[i] <= 0.0) return std::numeric_limits<double>::infinity();
      f -= c[i] * std::log(x[i]);
    }
    return f;
  };
  double f = objective(d);
  double eta = 0.5;
  NumericOptimum out;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    double move = 0.0;
    for (;;) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < K; ++i) {
        const double boost = std::min(50.0, eta * c[i] / std::max(d[i], 1e-300));
        logw[i] = std::log(std::max(d[i], 1e-300)) + boost;
        mx = std::max(mx, logw[i]);
      }
      double z = 0.0;
      for (int i = 0; i < K; ++i) {
        cand[i] = std::exp(logw[i] - mx);
        z += cand[i];
      }
      for (int i = 0; i < K; ++i) cand[i] /= z;
      const double fc = objective(cand);
      if (fc <= f + 1e-15 || eta < 1e-12) {
        move = 0.0;
        for (int i = 0; i < K; ++i) move = std::max(move, std::abs(cand[i] - d[i]));
        d.swap(cand);
        f = fc;
        break;
      }
      eta *= 0.5;
    }
    out.grad_norm = move / std::max(eta, 1e-300);
    eta = std::min(0.5, eta * 2.0);
    if (move < 1e-15) {
      ++iter;
      break;
    }
  }
  out.minimizer = std::move(d);
  out.iterations = iter;
  return out;
}

}  // namespace

NumericOptimum minimize_neg_log_simplex(const std::vector<double>& weights,
                                        const SimplexOptions& opts) {
  const int K = static_cast<int>(weights.size());
  require(K >= 2, ErrorCode::config, "minimize_neg_log_simplex: need >= 2 coordinates");
  const double total = vec_sum(weights);
  require(total > 0.0, ErrorCode::config, "minimize_neg_log_simplex: zero weight vector");
  std::vector<double> c(weights);
  for (double& x : c) x /= total;  // same minimizer, better conditioning

  if (opts.armijo) return mirror_descent_neg_log(c, opts.max_iters);

  std::vector<double> d(K, 1.0 / K), g, cand;
  NumericOptimum out;
  int iter = 0;
  for (; iter < opts.max_iters; ++iter) {
    neg_log_gradient(c, d, &g);
    cand = d;
    for (int i = 0; i < K; ++i) cand[i] -= opts.step * g[i];
    cand = project_simplex(std::move(cand));
    double move = 0.0;
    for (int i = 0; i < K; ++i) move += (cand[i] - d[i]) * (cand[i] - d[i]);
    const double gn = std::sqrt(move) / opts.step;
    d.swap(cand);
    out.grad_norm = gn;
    if (gn < opts.grad_tol) {
      ++iter;
      break;
    }
  }
  out.minimizer = std::move(d);
  out.iterations = iter;
  return out;
}

NumericOptimum optimal_d_numeric(const DiscreteWorld& world, int x, ObjectiveVariant variant,
                                 const SimplexOptions& opts) {
  require(x >= 0 && x < world.points(), ErrorCode::dimension, "optimal_d_numeric: bad x");
  const double pd = world.p_data[x], pg = world.p_g[x];
  require(pd + pg > 0.0, ErrorCode::config,
          "optimal_d_numeric: undefined point (both masses zero)");
  const int K = world.outcomes();
  std::vector<double> c(K);
  for (int v = 0; v < K; ++v) {
    c[v] = variant == ObjectiveVariant::kl_only
               ? pd * world.r1.probs[v] + pg * world.r0.probs[v]
               : pd * (world.r1.probs[v] + 1.0) + pg * world.r0.probs[v];
  }
  NumericOptimum opt = minimize_neg_log_simplex(c, opts);
  require(opt.grad_norm < opts.grad_tol, ErrorCode::divergence,
          "optimal_d_numeric: no convergence, final gradient norm " +
              std::to_string(opt.grad_norm));
  return opt;
}

double value_function_eval(const DiscreteWorld& world, const DiscriminatorChoice& d) {
  require(static_cast<int>(d.perspectives.size()) == world.points() &&
              static_cast<int>(d.scalars.size()) == world.points(),
          ErrorCode::dimension, "value_function_eval: choice size mismatch");
  double v = 0.0;
  for (int x = 0; x < world.points(); ++x) {
    const double s = d.scalars[x];
    require(s > 0.0 && s < 1.0, ErrorCode::divergence,
            "value_function_eval: scalar outside (0,1) makes a log non-positive");
    v += world.p_data[x] * (kl_divergence(world.r1.probs, d.perspectives[x]) + std::log(s));
    v += world.p_g[x] *
         (kl_divergence(world.r0.probs, d.perspectives[x]) + std::log(1.0 - s));
  }
  return v;
}

double generator_criterion(const DiscreteWorld& world) {
  const int K = world.outcomes();
  std::vector<double> mid(K);
  for (int v = 0; v < K; ++v) mid[v] = 0.5 * (world.r1.probs[v] + world.r0.probs[v]);
  double c = 0.0;
  for (int x = 0; x < world.points(); ++x) {
    const double mass = world.p_data[x] + world.p_g[x];
    if (mass <= 0.0) continue;
    c += mass * kl_divergence(optimal_d_closed_form(world, x).mixture, mid);
  }
  return c;
}

double appendix_vprime_term(const DiscreteWorld& world) {
  // Verbatim reproduction of the printed inner KL; the right side is not a
  // probability vector, so the result is usually NaN. Reported, not asserted.
  const int K = world.outcomes();
  double acc = 0.0;
  for (int x = 0; x < world.points(); ++x) {
    const double pd = world.p_data[x], pg = world.p_g[x];
    for (int v = 0; v < K; ++v) {
      const double lhs = (pd * world.r1.probs[v] + pg * world.r0.probs[v]) / 2.0;
      const double rhs = (pd + pg) * (world.r1.probs[v] + world.r0.probs[v] - 1.0) / 8.0;
      if (lhs <= 0.0) continue;
      acc += lhs * std::log(lhs / rhs);  // NaN when rhs <= 0, by design
    }
  }
  return -2.0 * acc;
}

namespace {

void enumerate_simplex_grid(int dims, int steps,
                            const std::function<void(const std::vector<double>&)>& fn) {
  std::vector<int> counts(dims, 0);
  std::vector<double> point(dims);
  // compositions of `steps` into `dims` nonnegative parts
  std::function<void(int, int)> rec = [&](int idx, int remaining) {
    if (idx == dims - 1) {
      counts[idx] = remaining;
      for (int i = 0; i < dims; ++i)
        point[i] = static_cast<double>(counts[i]) / static_cast<double>(steps);
      fn(point);
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[idx] = c;
      rec(idx + 1, remaining - c);
    }
  };
  rec(0, steps);
}

double sup_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

Theorem2Report theorem2_sweep(const DiscreteWorld& base, double grid_step) {
  base.validate();
  require(base.points() <= 4, ErrorCode::config, "theorem2_sweep: n_x must be <= 4");
  require(grid_step > 0.0 && grid_step <= 0.02 + 1e-12, ErrorCode::config,
          "theorem2_sweep: grid step must be <= 0.02");
  const int n = base.points();
  const int steps = static_cast<int>(std::lround(1.0 / grid_step));

  Theorem2Report rep;
  DiscreteWorld w = base;
  enumerate_simplex_grid(n, steps, [&](const std::vector<double>& p) {
    w.p_g = p;
    rep.grid.push_back(p);
    rep.criterion.push_back(generator_criterion(w));
  });
  // ensure p_data itself is evaluated
  bool has_pdata = false;
  for (const auto& p : rep.grid)
    if (sup_gap(p, base.p_data) < 1e-15) has_pdata = true;
  if (!has_pdata) {
    w.p_g = base.p_data;
    rep.grid.push_back(base.p_data);
    rep.criterion.push_back(generator_criterion(w));
  }

  rep.min_index = 0;
  for (size_t i = 1; i < rep.criterion.size(); ++i)
    if (rep.criterion[i] < rep.criterion[rep.min_index]) rep.min_index = static_cast<int>(i);
  const double cmin = rep.criterion[rep.min_index];
  rep.all_nonnegative = true;
  int n_at_min = 0;
  int best_match = -1;
  double best_match_gap = 1e9;
  for (size_t i = 0; i < rep.criterion.size(); ++i) {
    if (rep.criterion[i] < -1e-12) rep.all_nonnegative = false;
    if (rep.criterion[i] <= cmin + 1e-12) ++n_at_min;
    const double gap = sup_gap(rep.grid[i], base.p_data);
    if (gap < best_match_gap) {
      best_match_gap = gap;
      best_match = static_cast<int>(i);
    }
  }
  rep.unique_minimum = n_at_min == 1;
  rep.min_at_p_data = best_match == rep.min_index || sup_gap(rep.grid[rep.min_index],
                                                             base.p_data) <= grid_step / 2.0;

  // separation sweep at a fixed p_g != p_data
  std::vector<double> pg(base.p_data.rbegin(), base.p_data.rend());
  if (sup_gap(pg, base.p_data) < 1e-9) {
    pg.assign(n, 0.0);
    pg[0] = 0.7;
    for (int i = 1; i < n; ++i) pg[i] = 0.3 / (n - 1);
  }
  DiscreteWorld sep = base;
  sep.p_g = pg;
  rep.separation_monotone = true;
  double prev = -1.0;
  for (int s = 0; s <= 8; ++s) {
    const double lam = static_cast<double>(s) / 8.0;
    double norm = 0.0;
    for (int v = 0; v < base.outcomes(); ++v) {
      sep.r0.probs[v] = (1.0 - lam) * base.r1.probs[v] + lam * base.r0.probs[v];
      norm += sep.r0.probs[v];
    }
    for (double& x : sep.r0.probs) x /= norm;
    double maxdiff = 0.0;
    for (int v = 0; v < base.outcomes(); ++v)
      maxdiff = std::max(maxdiff, std::abs(base.r1.probs[v] - sep.r0.probs[v]));
    const double c = generator_criterion(sep);
    rep.separation_sweep.emplace_back(maxdiff, c);
    if (prev > c + 1e-12) rep.separation_monotone = false;
    prev = c;
  }
  return rep;
}

TheoryVerification run_theory_verification(int n_worlds, uint64_t seed,
                                           const std::string& csv_path) {
  std::ofstream csv(csv_path);
  require(csv.good(), ErrorCode::io, "run_theory_verification: cannot open '" + csv_path + "'");
  csv << "kind,world,variant,sup_norm_gap,c_min_at_p_data,unique_min,nonnegative,"
         "separation_monotone,printed_vs_klonly,printed_vs_klplus,printed_sum,vprime_term,"
         "pass\n";

  TheoryVerification out;
  out.csv_path = csv_path;
  Rng rng(seed);
  char line[512];

  for (int wi = 0; wi < n_worlds; ++wi) {
    const int n_x = 2 + static_cast<int>(rng.uniform_index(3));  // 2..4
    DiscreteWorld world = make_random_world(rng, n_x, 10);
    world.validate();

    double gap_klonly = 0.0, gap_klplus = 0.0;
    double printed_vs_klonly = 0.0, printed_vs_klplus = 0.0, printed_sum = 0.0;
    for (int x = 0; x < world.points(); ++x) {
      ClosedFormD cf = optimal_d_closed_form(world, x);
      NumericOptimum klo = optimal_d_numeric(world, x, ObjectiveVariant::kl_only);
      NumericOptimum klp = optimal_d_numeric(world, x, ObjectiveVariant::kl_plus_scalar);
      // normalized proof formula p_x(v)
      std::vector<double> px(world.outcomes());
      double pxsum = 0.0;
      for (int v = 0; v < world.outcomes(); ++v) {
        px[v] = world.p_data[x] * (world.r1.probs[v] + 1.0) +
                world.p_g[x] * world.r0.probs[v];
        pxsum += px[v];
      }
      for (double& p : px) p /= pxsum;
      gap_klonly = std::max(gap_klonly, sup_gap(klo.minimizer, cf.mixture));
      gap_klplus = std::max(gap_klplus, sup_gap(klp.minimizer, px));
      printed_vs_klonly = std::max(printed_vs_klonly, sup_gap(cf.d_star, klo.minimizer));
      printed_vs_klplus = std::max(printed_vs_klplus, sup_gap(cf.d_star, klp.minimizer));
      printed_sum = std::max(printed_sum, vec_sum(cf.d_star));
    }
    out.worst_klonly_gap = std::max(out.worst_klonly_gap, gap_klonly);
    out.worst_klplus_gap = std::max(out.worst_klplus_gap, gap_klplus);

    const bool pass_klonly = gap_klonly < 1e-4;
    const bool pass_klplus = gap_klplus < 1e-6;
    std::snprintf(line, sizeof(line), "optimum,%d,kl_only,%.12e,,,,,,,,,%s\n", wi, gap_klonly,
                  pass_klonly ? "pass" : "fail");
    csv << line;
    std::snprintf(line, sizeof(line), "optimum,%d,kl_plus_scalar,%.12e,,,,,,,,,%s\n", wi,
                  gap_klplus, pass_klplus ? "pass" : "fail");
    csv << line;
    std::snprintf(line, sizeof(line), "discrepancy,%d,printed_formula,,,,,,%.6e,%.6e,%.6f,%.6e,\n",
                  wi, printed_vs_klonly, printed_vs_klplus, printed_sum,
                  appendix_vprime_term(world));
    csv << line;
  }

  // Theorem-2 sweeps on fresh worlds of every admissible n_x.
  out.sweeps_pass = true;
  for (int n_x = 2; n_x <= 4; ++n_x) {
    DiscreteWorld world = make_random_world(rng, n_x, 10);
    Theorem2Report rep = theorem2_sweep(world, 0.02);
    const bool pass =
        rep.min_at_p_data && rep.unique_minimum && rep.all_nonnegative && rep.separation_monotone;
    out.sweeps_pass = out.sweeps_pass && pass;
    std::snprintf(line, sizeof(line), "theorem2,%d,grid,%zu,%d,%d,%d,%d,,,,,%s\n", n_x,
                  rep.grid.size(), rep.min_at_p_data ? 1 : 0, rep.unique_minimum ? 1 : 0,
                  rep.all_nonnegative ? 1 : 0, rep.separation_monotone ? 1 : 0,
                  pass ? "pass" : "fail");
    csv << line;
  }

  // Degenerate anchors: C must vanish identically.
  {
    Rng drng(seed ^ 0xdead5eedULL);
    DiscreteWorld world = make_random_world(drng, 2, 10);
    world.r0 = world.r1;
    DiscreteWorld w = world;
    double worst = 0.0;
    enumerate_simplex_grid(2, 50, [&](const std::vector<double>& p) {
      w.p_g = p;
      worst = std::max(worst, std::abs(generator_criterion(w)));
    });
    out.degenerate_anchor_flat = worst < 1e-12;
    std::snprintf(line, sizeof(line), "degenerate,0,equal_anchors,%.3e,,,,,,,,,%s\n", worst,
                  out.degenerate_anchor_flat ? "pass" : "fail");
    csv << line;
  }

  out.worlds = n_worlds;
  require(csv.good(), ErrorCode::io, "run_theory_verification: write failed");
  return out;
}

}  // namespace hpalf
