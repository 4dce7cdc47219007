#include "nekf/signal.hpp"

#include "nekf/errors.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace nekf {

FilterKind parse_filter_kind(const std::string& name) {
  if (name == "low-pass" || name == "lowpass") return FilterKind::LowPass;
  if (name == "high-pass" || name == "highpass") return FilterKind::HighPass;
  throw ContractError("unknown filter kind '" + name + "' (expected low-pass or high-pass)");
}

std::string to_string(FilterKind k) { return k == FilterKind::LowPass ? "low-pass" : "high-pass"; }

namespace {

// Bilinear map of (n2 s^2 + n1 s + n0) / (d2 s^2 + d1 s + d0) with s = k (1 - z^-1) / (1 + z^-1).
Biquad bilinear(double n2, double n1, double n0, double d2, double d1, double d0, double k) {
  const double k2 = k * k;
  const double a0 = d2 * k2 + d1 * k + d0;
  Biquad q;
  q.b0 = (n2 * k2 + n1 * k + n0) / a0;
  q.b1 = (2.0 * n0 - 2.0 * n2 * k2) / a0;
  q.b2 = (n2 * k2 - n1 * k + n0) / a0;
  q.a1 = (2.0 * d0 - 2.0 * d2 * k2) / a0;
  q.a2 = (d2 * k2 - d1 * k + d0) / a0;
  return q;
}

}  // namespace

std::vector<Biquad> butterworth_sos(FilterKind kind, double cutoff_hz, double rate_hz, int order) {
  if (order < 1) throw ContractError("butterworth: order must be >= 1");
  if (!(rate_hz > 0.0)) throw ContractError("butterworth: sample rate must be positive");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < 0.5 * rate_hz)) {
    throw ContractError("butterworth: cutoff " + format_double(cutoff_hz) +
                        " Hz must lie strictly between 0 and the Nyquist frequency " +
                        format_double(0.5 * rate_hz) + " Hz");
  }
  const double k = 2.0 * rate_hz;
  const double wc = k * std::tan(std::numbers::pi * cutoff_hz / rate_hz);
  const bool low = kind == FilterKind::LowPass;
  std::vector<Biquad> sos;
  for (int i = 0; i < order / 2; ++i) {
    // Conjugate pole pair of the normalized prototype; s^2 - 2 Re(p) wc s + wc^2.
    const double theta = std::numbers::pi * (2.0 * i + 1.0 + order) / (2.0 * order);
    const double re = std::cos(theta);
    const double d1 = -2.0 * re * wc, d0 = wc * wc;
    sos.push_back(low ? bilinear(0.0, 0.0, wc * wc, 1.0, d1, d0, k)
                      : bilinear(1.0, 0.0, 0.0, 1.0, d1, d0, k));
  }
  if (order % 2 == 1) {
    sos.push_back(low ? bilinear(0.0, 0.0, wc, 0.0, 1.0, wc, k)
                      : bilinear(0.0, 1.0, 0.0, 0.0, 1.0, wc, k));
  }
  return sos;
}

Vector sos_filter(const std::vector<Biquad>& sos, const Vector& x, bool steady_state) {
  Vector y = x;
  double level = x.size() > 0 ? x(0) : 0.0;
  for (const Biquad& q : sos) {
    double z1 = 0.0, z2 = 0.0;
    if (steady_state) {
      const double g = q.dc_gain();
      z1 = (g - q.b0) * level;
      z2 = (q.b2 - q.a2 * g) * level;
      level *= g;
    }
    for (Index n = 0; n < y.size(); ++n) {
      const double in = y(n);
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      y(n) = out;
    }
  }
  return y;
}

Vector sos_filtfilt(const std::vector<Biquad>& sos, const Vector& x) {
  const Index n = x.size();
  if (n == 0) return x;
  const Index pad = std::min<Index>(3 * (2 * static_cast<Index>(sos.size()) + 1), n - 1);
  Vector ext(n + 2 * pad);
  for (Index i = 0; i < pad; ++i) {
    ext(i) = 2.0 * x(0) - x(pad - i);
    ext(n + pad + i) = 2.0 * x(n - 1) - x(n - 2 - i);
  }
  ext.segment(pad, n) = x;
  Vector fwd = sos_filter(sos, ext, true);
  Vector rev = fwd.reverse();
  Vector back = sos_filter(sos, rev, true).reverse();
  return back.segment(pad, n);
}

TimeSeriesDataset butterworth_filter(const TimeSeriesDataset& ds, FilterKind kind,
                                     double cutoff_hz, int order) {
  const std::vector<Biquad> sos = butterworth_sos(kind, cutoff_hz, ds.sample_rate, order);
  TimeSeriesDataset out = ds;
  for (Trajectory& t : out.trajectories) {
    for (Matrix* m : {&t.u, &t.x}) {
      for (Index c = 0; c < m->cols(); ++c) m->col(c) = sos_filtfilt(sos, m->col(c));
    }
  }
  out.provenance.push_back({"butterworth_filter",
                            {{"kind", to_string(kind)},
                             {"cutoff_hz", format_double(cutoff_hz)},
                             {"order", std::to_string(order)}}});
  return out;
}

}  // namespace nekf
