#include "pieeg/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

namespace pieeg {

namespace {

constexpr double kPi = std::numbers::pi;

std::complex<double> eval_z(const Biquad& s, std::complex<double> zinv) {
  const auto num = s.b0 + zinv * (s.b1 + zinv * s.b2);
  const auto den = 1.0 + zinv * (s.a1 + zinv * s.a2);
  return num / den;
}

std::array<std::complex<double>, 2> section_poles(const Biquad& s) {
  // z^2 + a1 z + a2 = 0
  const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
  return {(-s.a1 + disc) / 2.0, (-s.a1 - disc) / 2.0};
}

}  // namespace

void SignalBlock::check() const {
  if (!(fs > 0.0)) throw std::domain_error("SignalBlock: fs must be > 0");
  for (const auto& ch : data) {
    if (ch.size() != samples()) throw std::domain_error("SignalBlock: channel lengths differ");
  }
}

std::complex<double> Biquad::response(double f, double fs) const {
  return eval_z(*this, std::polar(1.0, -2.0 * kPi * f / fs));
}

double Biquad::group_delay(double f, double fs) const {
  // For P(w) = sum p_k e^{-jwk}: delay = Re(sum k p_k e^{-jwk} / P(w)).
  const std::complex<double> z1 = std::polar(1.0, -2.0 * kPi * f / fs);
  const std::complex<double> z2 = z1 * z1;
  auto delay = [&](double p0, double p1, double p2) {
    return std::real((p1 * z1 + 2.0 * p2 * z2) / (p0 + p1 * z1 + p2 * z2));
  };
  return delay(b0, b1, b2) - delay(1.0, a1, a2);
}

bool Biquad::stable() const {
  for (const auto& p : section_poles(*this)) {
    if (!(std::abs(p) < 1.0)) return false;
  }
  return true;
}

BiquadCascade::BiquadCascade(std::vector<Biquad> sections, std::size_t channels)
    : sections_(std::move(sections)), channels_(channels), state_(channels * sections_.size() * 2, 0.0) {}

std::complex<double> BiquadCascade::response(double f, double fs) const {
  std::complex<double> h = 1.0;
  for (const auto& s : sections_) h *= s.response(f, fs);
  return h;
}

double BiquadCascade::magnitude_db(double f, double fs) const {
  return 20.0 * std::log10(std::abs(response(f, fs)));
}

double BiquadCascade::group_delay_s(double f, double fs) const {
  double samples = 0.0;
  for (const auto& s : sections_) samples += s.group_delay(f, fs);
  return samples / fs;
}

std::vector<std::complex<double>> BiquadCascade::poles() const {
  std::vector<std::complex<double>> out;
  for (const auto& s : sections_) {
    for (const auto& p : section_poles(s)) out.push_back(p);
  }
  return out;
}

bool BiquadCascade::stable() const {
  return std::all_of(sections_.begin(), sections_.end(), [](const Biquad& s) { return s.stable(); });
}

void BiquadCascade::reset() { std::fill(state_.begin(), state_.end(), 0.0); }

void BiquadCascade::process(std::size_t channel, std::span<double> samples) {
  if (channel >= channels_) throw std::domain_error("BiquadCascade: channel out of range");
  double* st = state_.data() + channel * sections_.size() * 2;
  for (std::size_t k = 0; k < sections_.size(); ++k) {
    const Biquad& s = sections_[k];
    double s1 = st[2 * k];
    double s2 = st[2 * k + 1];
    for (double& x : samples) {
      const double y = s.b0 * x + s1;
      s1 = s.b1 * x - s.a1 * y + s2;
      s2 = s.b2 * x - s.a2 * y;
      x = y;
    }
    st[2 * k] = s1;
    st[2 * k + 1] = s2;
  }
}

std::vector<std::array<double, 2>> BiquadCascade::step_state() const {
  std::vector<std::array<double, 2>> out;
  double u = 1.0;  // DC level entering the current section
  for (const auto& s : sections_) {
    const double y = u * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double z2 = s.b2 * u - s.a2 * y;
    const double z1 = s.b1 * u - s.a1 * y + z2;
    out.push_back({z1, z2});
    u = y;
  }
  return out;
}

BiquadCascade design_bandpass(double fs, double lo, double hi, int order, std::size_t channels) {
  if (!(fs > 0.0)) throw DesignError("design_bandpass: fs must be > 0");
  if (order < 2 || order % 2 != 0) {
    throw DesignError("design_bandpass: order must be a positive even number, got " + std::to_string(order));
  }
  if (!(lo > 0.0 && lo < hi)) throw DesignError("design_bandpass: need 0 < lo < hi");
  if (!(hi < fs / 2.0)) throw DesignError("design_bandpass: hi must be below fs/2");

  const int n = order;  // low-pass prototype order; the band-pass has 2n poles
  const double k2 = 2.0 * fs;
  const double w_lo = k2 * std::tan(kPi * lo / fs);
  const double w_hi = k2 * std::tan(kPi * hi / fs);
  const double bw = w_hi - w_lo;
  const double w0sq = w_lo * w_hi;

  std::vector<std::complex<double>> zpoles;
  for (int k = 0; k < n; ++k) {
    const std::complex<double> p = std::polar(1.0, kPi * (2.0 * k + n + 1.0) / (2.0 * n));
    const std::complex<double> pb = p * bw;
    const std::complex<double> root = std::sqrt(pb * pb - 4.0 * w0sq);
    for (const auto& s : {(pb + root) / 2.0, (pb - root) / 2.0}) {
      zpoles.push_back((k2 + s) / (k2 - s));
    }
  }

  std::vector<Biquad> sections;
  std::vector<double> real_poles;
  constexpr double kImagTol = 1e-12;
  for (const auto& z : zpoles) {
    if (z.imag() > kImagTol) {
      sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
    } else if (std::abs(z.imag()) <= kImagTol) {
      real_poles.push_back(z.real());
    }
  }
  std::sort(real_poles.begin(), real_poles.end());
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    sections.push_back({1.0, 0.0, -1.0, -(real_poles[i] + real_poles[i + 1]), real_poles[i] * real_poles[i + 1]});
  }
  if (sections.size() != static_cast<std::size_t>(n)) throw DesignError("design_bandpass: pole pairing failed");

  // Unity gain at the digital image of the geometric centre frequency.
  const double f_centre = fs / kPi * std::atan(std::sqrt(w0sq) / k2);
  BiquadCascade probe(sections, 0);
  const double gain = 1.0 / std::abs(probe.response(f_centre, fs));
  const double per_section = std::pow(gain, 1.0 / static_cast<double>(sections.size()));
  for (auto& s : sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }

  BiquadCascade out(std::move(sections), channels);
  if (!out.stable()) throw DesignError("design_bandpass: unstable design");
  return out;
}

BiquadCascade design_notch(double fs, double f0, double q, std::size_t channels) {
  if (!(fs > 0.0)) throw DesignError("design_notch: fs must be > 0");
  if (!(f0 > 0.0 && f0 < fs / 2.0)) throw DesignError("design_notch: f0 must lie in (0, fs/2)");
  if (!(q > 0.0)) throw DesignError("design_notch: q must be > 0");
  const double w0 = 2.0 * kPi * f0 / fs;
  const double g = 1.0 / (1.0 + std::tan(w0 / (2.0 * q)));
  const double c = std::cos(w0);
  BiquadCascade out({Biquad{g, -2.0 * g * c, g, -2.0 * g * c, 2.0 * g - 1.0}}, channels);
  if (!out.stable()) throw DesignError("design_notch: unstable design");
  return out;
}

SignalBlock filter_block(BiquadCascade& filter, const SignalBlock& block) {
  block.check();
  if (block.channels() != filter.channels()) {
    throw std::domain_error("filter_block: block has " + std::to_string(block.channels()) +
                            " channels, filter state has " + std::to_string(filter.channels()));
  }
  SignalBlock out = block;
  for (std::size_t ch = 0; ch < out.channels(); ++ch) filter.process(ch, out.data[ch]);
  return out;
}

SignalBlock filtfilt_block(const BiquadCascade& filter, const SignalBlock& block) {
  block.check();
  SignalBlock out = block;
  const std::size_t n = block.samples();
  if (n == 0) return out;
  const std::size_t ntaps = 2 * filter.sections().size() + 1;
  const std::size_t pad = std::min(3 * ntaps, n - 1);
  const auto zi = filter.step_state();

  // One causal pass with every section seeded at its steady state for a
  // constant input equal to x[0].
  auto run = [&](std::vector<double>& x) {
    const double x0 = x.front();
    for (std::size_t k = 0; k < filter.sections().size(); ++k) {
      const Biquad& s = filter.sections()[k];
      double s1 = zi[k][0] * x0;
      double s2 = zi[k][1] * x0;
      for (double& v : x) {
        const double y = s.b0 * v + s1;
        s1 = s.b1 * v - s.a1 * y + s2;
        s2 = s.b2 * v - s.a2 * y;
        v = y;
      }
    }
  };

  for (std::size_t ch = 0; ch < block.channels(); ++ch) {
    const auto& x = block.data[ch];
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

    run(ext);
    std::reverse(ext.begin(), ext.end());
    run(ext);
    std::reverse(ext.begin(), ext.end());
    std::copy(ext.begin() + static_cast<std::ptrdiff_t>(pad),
              ext.begin() + static_cast<std::ptrdiff_t>(pad + n), out.data[ch].begin());
  }
  return out;
}

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// One r2c transform of fixed length; planning is serialized, execution is not.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double power(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace

Spectrum welch_psd(const SignalBlock& block, const WelchOptions& options) {
  block.check();
  const std::size_t seg = options.segment_len;
  const std::size_t n = block.samples();
  if (seg < 2) throw std::domain_error("welch_psd: segment_len must be >= 2");
  if (!(options.overlap >= 0.0 && options.overlap < 1.0)) {
    throw std::domain_error("welch_psd: overlap must be in [0, 1)");
  }
  if (n < seg) {
    throw std::domain_error("welch_psd: block has " + std::to_string(n) + " samples, segment needs " +
                            std::to_string(seg));
  }
  const auto noverlap = static_cast<std::size_t>(std::floor(static_cast<double>(seg) * options.overlap));
  const std::size_t step = seg - noverlap;
  const std::size_t nseg = (n - seg) / step + 1;
  const std::size_t nbins = seg / 2 + 1;

  std::vector<double> window(seg);
  double wss = 0.0;
  for (std::size_t i = 0; i < seg; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(seg));
    wss += window[i] * window[i];
  }
  const double scale = 1.0 / (block.fs * wss);

  Spectrum spec;
  spec.resolution = block.fs / static_cast<double>(seg);
  spec.freqs.resize(nbins);
  for (std::size_t k = 0; k < nbins; ++k) spec.freqs[k] = static_cast<double>(k) * spec.resolution;
  spec.psd.assign(block.channels(), std::vector<double>(nbins, 0.0));

  RealFft fft(seg);
  for (std::size_t ch = 0; ch < block.channels(); ++ch) {
    const auto& x = block.data[ch];
    auto& acc = spec.psd[ch];
    for (std::size_t s = 0; s < nseg; ++s) {
      const std::size_t start = s * step;
      double mean = 0.0;
      if (options.detrend == Detrend::constant) {
        for (std::size_t i = 0; i < seg; ++i) mean += x[start + i];
        mean /= static_cast<double>(seg);
      }
      double* in = fft.input();
      for (std::size_t i = 0; i < seg; ++i) in[i] = (x[start + i] - mean) * window[i];
      fft.execute();
      for (std::size_t k = 0; k < nbins; ++k) acc[k] += fft.power(k);
    }
    for (std::size_t k = 0; k < nbins; ++k) {
      double v = acc[k] * scale / static_cast<double>(nseg);
      const bool nyquist = (seg % 2 == 0) && k == nbins - 1;
      if (k != 0 && !nyquist) v *= 2.0;
      acc[k] = v;
    }
  }
  return spec;
}

std::vector<double> band_power(const Spectrum& spec, double f_lo, double f_hi) {
  if (!(f_lo < f_hi)) throw std::domain_error("band_power: need f_lo < f_hi");
  if (spec.freqs.size() < 2) throw std::domain_error("band_power: spectrum has fewer than 2 bins");
  const double a = std::max(f_lo, spec.freqs.front());
  const double b = std::min(f_hi, spec.freqs.back());
  if (!(a < b)) throw std::domain_error("band_power: band does not overlap the spectrum");

  const auto& f = spec.freqs;
  auto interp = [&](const std::vector<double>& p, double x) {
    auto it = std::upper_bound(f.begin(), f.end(), x);
    if (it == f.end()) return p.back();
    const auto hi = static_cast<std::size_t>(it - f.begin());
    if (hi == 0) return p.front();
    const std::size_t lo = hi - 1;
    const double w = (x - f[lo]) / (f[hi] - f[lo]);
    return p[lo] + w * (p[hi] - p[lo]);
  };

  std::vector<double> out;
  out.reserve(spec.psd.size());
  for (const auto& p : spec.psd) {
    double prev_f = a;
    double prev_p = interp(p, a);
    double total = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      if (f[k] <= a) continue;
      if (f[k] >= b) break;
      total += 0.5 * (prev_p + p[k]) * (f[k] - prev_f);
      prev_f = f[k];
      prev_p = p[k];
    }
    total += 0.5 * (prev_p + interp(p, b)) * (b - prev_f);
    out.push_back(total);
  }
  return out;
}

}  // namespace pieeg
