#include "elcell/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "elcell/util.hpp"

namespace elcell {

namespace {

constexpr double kFdStep = 1e-6;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

} // namespace

// ---------------------------------------------------------------------------
// PotentialModel

PotentialModel::PotentialModel(std::string name, int species, StateFn value,
                               double slope_lower_bound, double partial_bound)
    : name_(std::move(name)),
      species_(species),
      value_(std::move(value)),
      slope_lower_bound_(slope_lower_bound),
      partial_bound_(partial_bound) {
  require(species_ >= 1, "potential model needs at least one species");
  require(static_cast<bool>(value_), "potential model needs a value function");
  require(slope_lower_bound_ > 0.0,
          "potential model needs a positive temperature-slope bound");
  require(partial_bound_ >= slope_lower_bound_,
          "potential partial bound cannot be below the slope bound");
}

double PotentialModel::value(std::span<const double> conc, double temp,
                             const Point& pos) const {
  return value_(conc, temp, pos);
}

double PotentialModel::temp_partial(std::span<const double> conc, double temp,
                                    const Point& pos) const {
  if (temp_partial_) return temp_partial_(conc, temp, pos);
  const double up = value_(conc, temp + kFdStep, pos);
  const double dn = value_(conc, temp - kFdStep, pos);
  return (up - dn) / (2.0 * kFdStep);
}

double PotentialModel::conc_partial(int i, std::span<const double> conc,
                                    double temp, const Point& pos) const {
  require(i >= 0 && i < species_, "conc_partial: species index out of range");
  if (!conc_partials_.empty()) return conc_partials_[static_cast<size_t>(i)](conc, temp, pos);
  std::vector<double> c(conc.begin(), conc.end());
  c[static_cast<size_t>(i)] += kFdStep;
  const double up = value_(c, temp, pos);
  c[static_cast<size_t>(i)] -= 2.0 * kFdStep;
  const double dn = value_(c, temp, pos);
  return (up - dn) / (2.0 * kFdStep);
}

Point PotentialModel::pos_gradient(std::span<const double> conc, double temp,
                                   const Point& pos) const {
  if (pos_gradient_) return pos_gradient_(conc, temp, pos);
  Point g{0.0, 0.0, 0.0};
  for (int ax = 0; ax < 3; ++ax) {
    Point p = pos;
    p[static_cast<size_t>(ax)] += kFdStep;
    const double up = value_(conc, temp, p);
    p[static_cast<size_t>(ax)] -= 2.0 * kFdStep;
    const double dn = value_(conc, temp, p);
    g[static_cast<size_t>(ax)] = (up - dn) / (2.0 * kFdStep);
  }
  return g;
}

void PotentialModel::set_partials(StateFn temp_partial,
                                  std::vector<StateFn> conc_partials,
                                  PosGradFn pos_gradient) {
  require(static_cast<int>(conc_partials.size()) == species_,
          "set_partials: need one concentration partial per species");
  temp_partial_ = std::move(temp_partial);
  conc_partials_ = std::move(conc_partials);
  pos_gradient_ = std::move(pos_gradient);
}

PotentialModel PotentialModel::shifted(double r) const {
  PotentialModel out = *this;
  out.name_ = name_ + "+const";
  StateFn base = value_;
  out.value_ = [base, r](std::span<const double> c, double t, const Point& x) {
    return base(c, t, x) + r;
  };
  // Partials are unchanged by a constant shift; the installed closures (if
  // any) still apply.
  return out;
}

// ---------------------------------------------------------------------------
// DiffusionModel

DiffusionModel::DiffusionModel(std::string name, int species, StateFn value,
                               double lower, double upper, double lipschitz)
    : name_(std::move(name)),
      species_(species),
      value_(std::move(value)),
      lower_(lower),
      upper_(upper),
      lipschitz_(lipschitz) {
  require(species_ >= 1, "diffusion model needs at least one species");
  require(static_cast<bool>(value_), "diffusion model needs a value function");
  require(lower_ > 0.0, "diffusion model needs a positive lower bound");
  require(upper_ >= lower_, "diffusion upper bound below lower bound");
  require(lipschitz_ >= 0.0, "diffusion Lipschitz constant cannot be negative");
}

double DiffusionModel::value(std::span<const double> conc, double temp,
                             const Point& pos) const {
  return value_(conc, temp, pos);
}

// ---------------------------------------------------------------------------
// SourceModel

SourceModel::SourceModel(std::string name, int species, StateFn value, double c0,
                         double c1, bool identically_zero)
    : name_(std::move(name)),
      species_(species),
      value_(std::move(value)),
      c0_(c0),
      c1_(c1),
      zero_(identically_zero) {
  require(species_ >= 1, "source model needs at least one species");
  require(static_cast<bool>(value_), "source model needs a value function");
  require(c0_ >= 0.0 && c1_ >= 0.0, "source growth bounds cannot be negative");
}

double SourceModel::value(std::span<const double> conc, double temp,
                          const Point& pos) const {
  return value_(conc, temp, pos);
}

// ---------------------------------------------------------------------------
// PermittivityModel

PermittivityModel::PermittivityModel(std::string name,
                                     std::function<double(const Point&)> value,
                                     double lower)
    : name_(std::move(name)), value_(std::move(value)), lower_(lower) {
  require(static_cast<bool>(value_), "permittivity model needs a value function");
  require(lower_ > 0.0, "permittivity model needs a positive lower bound");
}

double PermittivityModel::value(const Point& pos) const { return value_(pos); }

ScalarField PermittivityModel::sample(const Grid& g) const {
  return sample_scalar(g, [this](const Point& p) { return value_(p); });
}

// ---------------------------------------------------------------------------
// ModelBundle

bool ModelBundle::source_free() const {
  for (const auto& s : source)
    if (!s.is_zero()) return false;
  return true;
}

void ModelBundle::check() const {
  require(species >= 1, "bundle needs at least one species");
  require(static_cast<int>(charge.size()) == species,
          "bundle needs one charge per species");
  require(potential.species() == species,
          "potential species count does not match bundle");
  require(static_cast<int>(diffusion.size()) == species,
          "bundle needs one diffusion model per species");
  require(static_cast<int>(source.size()) == species,
          "bundle needs one source model per species");
  require(lambda > 0.0, "bundle needs a positive ellipticity constant");
  for (const auto& q : charge)
    require(std::isfinite(q), "bundle charge must be finite");
  require(permittivity.lower() >= lambda,
          "declared permittivity bound is below the bundle ellipticity constant");
  for (const auto& d : diffusion)
    require(d.lower() >= lambda,
            "declared diffusion bound is below the bundle ellipticity constant");
  require(potential.slope_lower_bound() >= lambda,
          "declared potential slope bound is below the bundle ellipticity constant");
}

// ---------------------------------------------------------------------------
// Ellipticity validation

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<size_t>(n));
  if (n == 1) {
    out[0] = 0.5 * (lo + hi);
    return out;
  }
  for (int i = 0; i < n; ++i)
    out[static_cast<size_t>(i)] = lo + (hi - lo) * double(i) / double(n - 1);
  return out;
}

// Odometer over per-axis sample lists; visits every combination.
class SampleSweep {
 public:
  explicit SampleSweep(std::vector<std::vector<double>> axes)
      : axes_(std::move(axes)), index_(axes_.size(), 0) {}

  bool done() const { return done_; }
  double axis_value(size_t k) const { return axes_[k][index_[k]]; }

  void advance() {
    for (size_t k = 0; k < index_.size(); ++k) {
      if (++index_[k] < axes_[k].size()) return;
      index_[k] = 0;
    }
    done_ = true;
  }

 private:
  std::vector<std::vector<double>> axes_;
  std::vector<size_t> index_;
  bool done_ = false;
};

} // namespace

EllipticityReport validate_ellipticity(const ModelBundle& bundle,
                                       const StateRanges& ranges) {
  bundle.check();
  require(static_cast<int>(ranges.conc.size()) == bundle.species,
          "validate_ellipticity: need one concentration range per species");
  require(ranges.points_per_axis >= 2,
          "validate_ellipticity: need at least two points per axis");
  require(ranges.grid != nullptr, "validate_ellipticity: need a grid for positions");

  const int n = ranges.points_per_axis;
  const Grid& g = *ranges.grid;

  // Axes: one per species, then temperature, then dim position axes.
  std::vector<std::vector<double>> axes;
  for (const auto& r : ranges.conc) {
    require(r[0] <= r[1], "validate_ellipticity: empty concentration range");
    axes.push_back(linspace(r[0], r[1], n));
  }
  require(ranges.temp[0] <= ranges.temp[1],
          "validate_ellipticity: empty temperature range");
  axes.push_back(linspace(ranges.temp[0], ranges.temp[1], n));
  for (int ax = 0; ax < g.dim(); ++ax)
    axes.push_back(linspace(g.lo(ax), g.hi(ax), n));

  EllipticityReport rep;
  rep.min_permittivity = std::numeric_limits<double>::infinity();
  rep.min_diffusion = std::numeric_limits<double>::infinity();
  rep.min_potential_slope = std::numeric_limits<double>::infinity();

  const size_t M = static_cast<size_t>(bundle.species);
  std::vector<double> conc(M, 0.0);

  auto fail = [&](const std::string& who, const std::vector<double>& c, double t,
                  const Point& x, double got) {
    rep.ok = false;
    rep.violator = who;
    rep.sample_conc = c;
    rep.sample_temp = t;
    rep.sample_pos = x;
    std::ostringstream msg;
    msg << who << " dropped to " << got << " (needs >= " << bundle.lambda
        << ") at temp=" << t << " pos=(" << x[0] << "," << x[1] << "," << x[2]
        << ") conc=(";
    for (size_t i = 0; i < c.size(); ++i) msg << (i ? "," : "") << c[i];
    msg << ")";
    rep.message = msg.str();
  };

  for (SampleSweep sweep(std::move(axes)); !sweep.done(); sweep.advance()) {
    for (size_t i = 0; i < M; ++i) conc[i] = sweep.axis_value(i);
    const double t = sweep.axis_value(M);
    Point x{0.0, 0.0, 0.0};
    for (int ax = 0; ax < g.dim(); ++ax)
      x[static_cast<size_t>(ax)] = sweep.axis_value(M + 1 + static_cast<size_t>(ax));

    const double eps = bundle.permittivity.value(x);
    rep.min_permittivity = std::min(rep.min_permittivity, eps);
    if (eps < bundle.lambda) {
      fail("permittivity", conc, t, x, eps);
      return rep;
    }

    for (size_t i = 0; i < M; ++i) {
      const double d = bundle.diffusion[i].value(conc, t, x);
      rep.min_diffusion = std::min(rep.min_diffusion, d);
      if (d < bundle.lambda) {
        fail("diffusion[" + std::to_string(i) + "]", conc, t, x, d);
        return rep;
      }
    }

    const double slope = bundle.potential.temp_partial(conc, t, x);
    rep.min_potential_slope = std::min(rep.min_potential_slope, slope);
    if (slope < bundle.lambda) {
      fail("potential", conc, t, x, slope);
      return rep;
    }

    double cmax = 0.0;
    for (size_t i = 0; i < M; ++i) cmax = std::max(cmax, std::abs(conc[i]));
    for (size_t i = 0; i < M; ++i) {
      const double gv = std::abs(bundle.source[i].value(conc, t, x));
      const double allowed = bundle.source[i].growth_c0() +
                             bundle.source[i].growth_c1() * cmax;
      if (gv > allowed * (1.0 + 1e-9) + 1e-12) {
        rep.ok = false;
        rep.violator = "source[" + std::to_string(i) + "]";
        rep.sample_conc = conc;
        rep.sample_temp = t;
        rep.sample_pos = x;
        std::ostringstream msg;
        msg << rep.violator << " exceeded its declared growth bound: |g|=" << gv
            << " > " << allowed;
        rep.message = msg.str();
        return rep;
      }
    }
  }

  return rep;
}

// ---------------------------------------------------------------------------
// Inverse temperature map

double invert_temperature(const PotentialModel& phi, std::span<const double> conc,
                          double target, const Point& pos, double tol) {
  require(tol > 0.0, "invert_temperature: tolerance must be positive");
  const double lam = phi.slope_lower_bound();

  // The map t -> phi(conc, t, pos) is strictly increasing with slope >= lam,
  // so a unique root exists. Start from the scaled guess and expand a bracket
  // by doubling steps.
  double t0 = target / lam;
  double f0 = phi.value(conc, t0, pos) - target;
  if (std::abs(f0) <= tol) return t0;

  double lo, hi, flo, fhi;
  double step = std::max(1.0, std::abs(t0));
  if (f0 > 0.0) {
    hi = t0;
    fhi = f0;
    lo = t0;
    flo = f0;
    for (int k = 0; k < 200 && flo > 0.0; ++k) {
      lo -= step;
      step *= 2.0;
      flo = phi.value(conc, lo, pos) - target;
    }
    if (flo > 0.0)
      throw NumericalError("invert_temperature: failed to bracket the root below");
  } else {
    lo = t0;
    flo = f0;
    hi = t0;
    fhi = f0;
    for (int k = 0; k < 200 && fhi < 0.0; ++k) {
      hi += step;
      step *= 2.0;
      fhi = phi.value(conc, hi, pos) - target;
    }
    if (fhi < 0.0)
      throw NumericalError("invert_temperature: failed to bracket the root above");
  }

  // Safeguarded Newton: take Newton steps while they stay in the bracket,
  // fall back to bisection otherwise.
  double t = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = phi.value(conc, t, pos) - target;
    if (std::abs(f) <= tol) return t;
    if (f > 0.0)
      hi = t;
    else
      lo = t;
    const double slope = phi.temp_partial(conc, t, pos);
    double tn = t - f / std::max(slope, lam * 0.5);
    if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
    if (tn == t) tn = 0.5 * (lo + hi);
    t = tn;
  }
  const double f = phi.value(conc, t, pos) - target;
  if (std::abs(f) <= tol) return t;
  throw NumericalError("invert_temperature: no convergence after 200 iterations");
}

double invert_temperature_slope(const PotentialModel& phi,
                                std::span<const double> conc, double target,
                                const Point& pos, double tol) {
  const double t = invert_temperature(phi, conc, target, pos, tol);
  const double slope = phi.temp_partial(conc, t, pos);
  if (!(slope > 0.0))
    throw NumericalError("invert_temperature_slope: non-positive slope");
  return 1.0 / slope;
}

// ---------------------------------------------------------------------------
// Catalogue

PotentialModel make_affine_potential(std::vector<double> conc_coef,
                                     double temp_coef, double offset,
                                     Point pos_coef) {
  const int M = static_cast<int>(conc_coef.size());
  require(M >= 1, "make_affine_potential: need at least one species");
  require(temp_coef > 0.0, "make_affine_potential: temp_coef must be positive");

  auto value = [conc_coef, temp_coef, offset, pos_coef](
                   std::span<const double> c, double t, const Point& x) {
    double v = offset + temp_coef * t;
    for (size_t i = 0; i < conc_coef.size(); ++i) v += conc_coef[i] * c[i];
    for (size_t a = 0; a < 3; ++a) v += pos_coef[a] * x[a];
    return v;
  };

  double pb = temp_coef;
  for (double a : conc_coef) pb = std::max(pb, std::abs(a));
  for (double a : pos_coef) pb = std::max(pb, std::abs(a));

  PotentialModel m("affine", M, value, temp_coef, pb);
  std::vector<StateFn> cps;
  for (int i = 0; i < M; ++i) {
    const double a = conc_coef[static_cast<size_t>(i)];
    cps.push_back([a](std::span<const double>, double, const Point&) { return a; });
  }
  m.set_partials(
      [temp_coef](std::span<const double>, double, const Point&) { return temp_coef; },
      std::move(cps),
      [pos_coef](std::span<const double>, double, const Point&) { return pos_coef; });
  return m;
}

PotentialModel make_affine_sin_potential(std::vector<double> conc_coef,
                                         double temp_coef, double offset,
                                         Point pos_coef, double amp, double freq) {
  const int M = static_cast<int>(conc_coef.size());
  require(M >= 1, "make_affine_sin_potential: need at least one species");
  const double slope_bound = temp_coef - std::abs(amp * freq);
  require(slope_bound > 0.0,
          "make_affine_sin_potential: need temp_coef > |amp*freq|");

  auto value = [conc_coef, temp_coef, offset, pos_coef, amp, freq](
                   std::span<const double> c, double t, const Point& x) {
    double v = offset + temp_coef * t + amp * std::sin(freq * t);
    for (size_t i = 0; i < conc_coef.size(); ++i) v += conc_coef[i] * c[i];
    for (size_t a = 0; a < 3; ++a) v += pos_coef[a] * x[a];
    return v;
  };

  double pb = temp_coef + std::abs(amp * freq);
  for (double a : conc_coef) pb = std::max(pb, std::abs(a));
  for (double a : pos_coef) pb = std::max(pb, std::abs(a));

  PotentialModel m("affine+sin", M, value, slope_bound, pb);
  std::vector<StateFn> cps;
  for (int i = 0; i < M; ++i) {
    const double a = conc_coef[static_cast<size_t>(i)];
    cps.push_back([a](std::span<const double>, double, const Point&) { return a; });
  }
  m.set_partials(
      [temp_coef, amp, freq](std::span<const double>, double t, const Point&) {
        return temp_coef + amp * freq * std::cos(freq * t);
      },
      std::move(cps),
      [pos_coef](std::span<const double>, double, const Point&) { return pos_coef; });
  return m;
}

PotentialModel make_separable_potential(double temp_coef, double conc_amp,
                                        double pos_coef, double offset) {
  require(temp_coef > 0.0, "make_separable_potential: temp_coef must be positive");
  require(std::abs(conc_amp) < 1.0, "make_separable_potential: need |conc_amp| < 1");
  require(pos_coef >= 0.0, "make_separable_potential: need pos_coef >= 0");

  auto factor = [conc_amp, pos_coef](std::span<const double> c, const Point& x) {
    return (1.0 + conc_amp * std::sin(c[0])) * (1.0 + pos_coef * x[0]);
  };
  auto value = [temp_coef, offset, factor](std::span<const double> c, double t,
                                           const Point& x) {
    return temp_coef * t * factor(c, x) + offset;
  };

  // On the unit box the product factor stays in [(1-|conc_amp|), (1+|conc_amp|)(1+pos_coef)].
  const double slope_bound = temp_coef * (1.0 - std::abs(conc_amp));
  const double factor_hi = (1.0 + std::abs(conc_amp)) * (1.0 + pos_coef);
  const double pb = temp_coef * factor_hi;

  PotentialModel m("separable", 1, value, slope_bound, std::max(pb, 1.0));
  std::vector<StateFn> cps;
  cps.push_back([temp_coef, conc_amp, pos_coef](std::span<const double> c, double t,
                                                const Point& x) {
    return temp_coef * t * conc_amp * std::cos(c[0]) * (1.0 + pos_coef * x[0]);
  });
  m.set_partials(
      [temp_coef, factor](std::span<const double> c, double, const Point& x) {
        return temp_coef * factor(c, x);
      },
      std::move(cps),
      [temp_coef, conc_amp, pos_coef](std::span<const double> c, double t,
                                      const Point&) {
        return Point{temp_coef * t * (1.0 + conc_amp * std::sin(c[0])) * pos_coef,
                     0.0, 0.0};
      });
  return m;
}

double bump_profile(const Point& x, const Point& center, double radius) {
  double r2 = 0.0;
  for (size_t a = 0; a < 3; ++a) r2 += sqr(x[a] - center[a]);
  const double r = std::sqrt(r2);
  if (r >= radius) return 0.0;
  const double c = std::cos(0.5 * M_PI * r / radius);
  return c * c;
}

PotentialModel make_bumped_potential(const PotentialModel& base, Point center,
                                     double radius, double amp) {
  require(radius > 0.0, "make_bumped_potential: radius must be positive");
  auto value = [base, center, radius, amp](std::span<const double> c, double t,
                                           const Point& x) {
    return base.value(c, t, x) + amp * bump_profile(x, center, radius);
  };
  // The bump is position-only: state partials are the base model's, the
  // position gradient picks up the bump term. |grad psi| <= pi / (2 radius).
  const double extra = std::abs(amp) * M_PI / (2.0 * radius);
  PotentialModel m(base.name() + "+bump", base.species(), value,
                   base.slope_lower_bound(), base.partial_bound() + extra);

  std::vector<StateFn> cps;
  for (int i = 0; i < base.species(); ++i)
    cps.push_back([base, i](std::span<const double> c, double t, const Point& x) {
      return base.conc_partial(i, c, t, x);
    });
  m.set_partials(
      [base](std::span<const double> c, double t, const Point& x) {
        return base.temp_partial(c, t, x);
      },
      std::move(cps),
      [base, center, radius, amp](std::span<const double> c, double t,
                                  const Point& x) {
        Point g = base.pos_gradient(c, t, x);
        double r2 = 0.0;
        for (size_t a = 0; a < 3; ++a) r2 += sqr(x[a] - center[a]);
        const double r = std::sqrt(r2);
        if (r > 0.0 && r < radius) {
          const double arg = 0.5 * M_PI * r / radius;
          const double dpsi = -M_PI / radius * std::cos(arg) * std::sin(arg);
          for (size_t a = 0; a < 3; ++a) g[a] += amp * dpsi * (x[a] - center[a]) / r;
        }
        return g;
      });
  return m;
}

DiffusionModel make_constant_diffusion(double value) {
  require(value > 0.0, "make_constant_diffusion: value must be positive");
  return DiffusionModel(
      "constant", 1,
      [value](std::span<const double>, double, const Point&) { return value; },
      value, value, 0.0);
}

DiffusionModel make_affine_temp_diffusion(double base, double slope,
                                          std::array<double, 2> temp_range) {
  require(temp_range[0] <= temp_range[1],
          "make_affine_temp_diffusion: empty temperature range");
  const double v0 = base + slope * temp_range[0];
  const double v1 = base + slope * temp_range[1];
  const double lo = std::min(v0, v1);
  const double hi = std::max(v0, v1);
  require(lo > 0.0,
          "make_affine_temp_diffusion: not positive over the temperature range");
  return DiffusionModel(
      "affine-temp", 1,
      [base, slope](std::span<const double>, double t, const Point&) {
        return base + slope * t;
      },
      lo, hi, std::abs(slope));
}

DiffusionModel make_sin_mix_diffusion(double base, double amp, double conc_w,
                                      double temp_w) {
  require(base > std::abs(amp), "make_sin_mix_diffusion: need base > |amp|");
  return DiffusionModel(
      "sin-mix", 1,
      [base, amp, conc_w, temp_w](std::span<const double> c, double t, const Point&) {
        return base + amp * std::sin(conc_w * c[0] + temp_w * t);
      },
      base - std::abs(amp), base + std::abs(amp),
      std::abs(amp) * std::max(std::abs(conc_w), std::abs(temp_w)));
}

DiffusionModel make_position_diffusion(double base, Point grad, const Grid& box) {
  // Bounds from the corners of the box.
  double lo = base, hi = base;
  for (int corner = 0; corner < (1 << box.dim()); ++corner) {
    double v = base;
    for (int ax = 0; ax < box.dim(); ++ax) {
      const double coord = (corner >> ax) & 1 ? box.hi(ax) : box.lo(ax);
      v += grad[static_cast<size_t>(ax)] * coord;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  require(lo > 0.0, "make_position_diffusion: not positive over the box");
  return DiffusionModel(
      "position", 1,
      [base, grad](std::span<const double>, double, const Point& x) {
        return base + grad[0] * x[0] + grad[1] * x[1] + grad[2] * x[2];
      },
      lo, hi, 0.0);
}

SourceModel make_zero_source() {
  return SourceModel(
      "zero", 1, [](std::span<const double>, double, const Point&) { return 0.0; },
      0.0, 0.0, true);
}

SourceModel make_bounded_source(double amp, double freq) {
  return SourceModel(
      "bounded-sin", 1,
      [amp, freq](std::span<const double> c, double, const Point&) {
        return amp * std::sin(freq * c[0]);
      },
      std::abs(amp), 0.0, false);
}

PermittivityModel make_constant_permittivity(double value) {
  require(value > 0.0, "make_constant_permittivity: value must be positive");
  return PermittivityModel(
      "constant", [value](const Point&) { return value; }, value);
}

PermittivityModel make_affine_permittivity(double base, Point grad,
                                           const Grid& box) {
  double lo = base;
  for (int corner = 0; corner < (1 << box.dim()); ++corner) {
    double v = base;
    for (int ax = 0; ax < box.dim(); ++ax) {
      const double coord = (corner >> ax) & 1 ? box.hi(ax) : box.lo(ax);
      v += grad[static_cast<size_t>(ax)] * coord;
    }
    lo = std::min(lo, v);
  }
  require(lo > 0.0, "make_affine_permittivity: not positive over the box");
  return PermittivityModel(
      "affine",
      [base, grad](const Point& x) {
        return base + grad[0] * x[0] + grad[1] * x[1] + grad[2] * x[2];
      },
      lo);
}

// ---------------------------------------------------------------------------
// Expression-backed models

PotentialModel potential_from_expression(const std::string& expr, int species,
                                         double slope_lower_bound,
                                         double partial_bound) {
  Expression e = Expression::parse(expr);
  require(e.species_used() <= species,
          "potential expression uses more species than declared");
  auto value = [e](std::span<const double> c, double t, const Point& x) {
    return e.eval(c, t, x);
  };
  return PotentialModel("expr:" + expr, species, value, slope_lower_bound,
                        partial_bound);
}

DiffusionModel diffusion_from_expression(const std::string& expr, int species,
                                         double lower, double upper,
                                         double lipschitz) {
  Expression e = Expression::parse(expr);
  require(e.species_used() <= species,
          "diffusion expression uses more species than declared");
  auto value = [e](std::span<const double> c, double t, const Point& x) {
    return e.eval(c, t, x);
  };
  return DiffusionModel("expr:" + expr, species, value, lower, upper, lipschitz);
}

SourceModel source_from_expression(const std::string& expr, int species,
                                   double c0, double c1) {
  Expression e = Expression::parse(expr);
  require(e.species_used() <= species,
          "source expression uses more species than declared");
  auto value = [e](std::span<const double> c, double t, const Point& x) {
    return e.eval(c, t, x);
  };
  return SourceModel("expr:" + expr, species, value, c0, c1, false);
}

PermittivityModel permittivity_from_expression(const std::string& expr,
                                               double lower) {
  Expression e = Expression::parse(expr);
  require(e.species_used() == 0,
          "permittivity expression cannot depend on concentrations");
  auto value = [e](const Point& x) {
    return e.eval(std::span<const double>{}, 0.0, x);
  };
  return PermittivityModel("expr:" + expr, value, lower);
}

} // namespace elcell
