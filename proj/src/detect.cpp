#include "pieeg/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pieeg {

namespace {

std::int64_t samples_for(double seconds, double fs) {
  return std::max<std::int64_t>(1, std::llround(seconds * fs));
}

void check_roles(const std::vector<int>& roles, const char* name, std::size_t channels) {
  for (int c : roles) {
    if (c < 0 || static_cast<std::size_t>(c) >= channels) {
      throw DetectorConfigError(std::string(name) + " channel " + std::to_string(c) + " out of range");
    }
  }
}

void require_channels(const std::vector<int>& roles, const SignalBlock& block, const char* who) {
  for (int c : roles) {
    if (static_cast<std::size_t>(c) >= block.channels()) {
      throw DetectorConfigError(std::string(who) + ": block has " + std::to_string(block.channels()) +
                                " channels, role needs channel " + std::to_string(c));
    }
  }
}

// k-th largest value (k >= 1) of a small vector.
double kth_largest(std::vector<double> v, int k) {
  if (v.empty()) return 0.0;
  const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k - 1), v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end(), std::greater<>());
  return v[idx];
}

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

double safe_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::blink: return "blink";
    case EventKind::chew: return "chew";
    case EventKind::alpha: return "alpha";
  }
  return "unknown";
}

void DetectorConfig::check(std::size_t channels) const {
  check_roles(frontal, "frontal", channels);
  check_roles(occipital, "occipital", channels);
  check_roles(chew_channels, "chew", channels);
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw DetectorConfigError(std::string(name) + " must be > 0");
  };
  positive(blink_k, "blink_k");
  positive(blink_min_s, "blink_min_s");
  positive(baseline_window_s, "baseline_window_s");
  positive(baseline_update_s, "baseline_update_s");
  positive(chew_k, "chew_k");
  positive(chew_window_s, "chew_window_s");
  positive(chew_envelope_s, "chew_envelope_s");
  positive(chew_hop_s, "chew_hop_s");
  positive(chew_baseline_window_s, "chew_baseline_window_s");
  positive(alpha_window_s, "alpha_window_s");
  positive(alpha_hop_s, "alpha_hop_s");
  if (blink_max_s < blink_min_s) throw DetectorConfigError("blink_max_s < blink_min_s");
  if (blink_separation_s < 0.0 || blink_floor_uv < 0.0 || baseline_warmup_s < 0.0) {
    throw DetectorConfigError("blink separation, floor and warmup must be >= 0");
  }
  if (!(chew_band_lo > 0.0 && chew_band_hi > chew_band_lo)) throw DetectorConfigError("bad chew band");
  if (chew_min_channels < 1) throw DetectorConfigError("chew_min_channels must be >= 1");
  if (chew_rate_max_hz < chew_rate_min_hz) throw DetectorConfigError("chew rate range is empty");
  if (chew_burst_fraction < 0.0 || chew_burst_fraction >= 1.0) {
    throw DetectorConfigError("chew_burst_fraction must be in [0, 1)");
  }
  if (!(alpha_exit <= alpha_enter && alpha_exit >= 0.0 && alpha_enter <= 1.0)) {
    throw DetectorConfigError("need 0 <= alpha_exit <= alpha_enter <= 1");
  }
  if (alpha_window_s < 2.0) throw DetectorConfigError("alpha_window_s must be >= 2");
}

std::vector<double> alpha_index(const SignalBlock& block) {
  block.check();
  const auto n = block.samples();
  if (static_cast<double>(n) + 0.5 < 2.0 * block.fs) {
    throw std::domain_error("alpha_index: need at least two seconds of data");
  }
  std::size_t seg = std::size_t{1} << static_cast<int>(std::lround(std::log2(block.fs)));
  seg = std::min(seg, n);
  const Spectrum spec = welch_psd(block, {seg, 0.5, Detrend::constant});
  const auto alpha = band_power(spec, 8.0, 12.0);
  const auto total = band_power(spec, 1.0, 30.0);
  std::vector<double> out(block.channels(), 0.0);
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (total[c] > 0.0) out[c] = std::clamp(alpha[c] / total[c], 0.0, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------- blink

BlinkDetector::BlinkDetector(const DetectorConfig& config, double fs) : cfg_(config), fs_(fs) {
  if (!(fs > 0.0)) throw DetectorConfigError("sample rate must be > 0");
  if (cfg_.frontal.empty()) config_error_ = "blink detection needs at least one frontal channel";
  window_ = samples_for(cfg_.baseline_window_s, fs);
  update_every_ = samples_for(cfg_.baseline_update_s, fs);
  warmup_ = std::max<std::int64_t>(2, std::llround(cfg_.baseline_warmup_s * fs));
  min_len_ = samples_for(cfg_.blink_min_s, fs);
  max_len_ = samples_for(cfg_.blink_max_s, fs);
  separation_ = std::llround(cfg_.blink_separation_s * fs);
  history_.assign(cfg_.frontal.size(), std::vector<double>(static_cast<std::size_t>(window_), 0.0));
  median_.assign(cfg_.frontal.size(), 0.0);
  mad_.assign(cfg_.frontal.size(), 0.0);
}

void BlinkDetector::update_baseline() {
  std::vector<double> scratch(history_fill_);
  for (std::size_t c = 0; c < history_.size(); ++c) {
    std::copy_n(history_[c].begin(), history_fill_, scratch.begin());
    const double med = median_of(scratch);
    for (std::size_t i = 0; i < history_fill_; ++i) scratch[i] = std::abs(history_[c][i] - med);
    median_[c] = med;
    mad_[c] = median_of(scratch);
  }
  baseline_ready_ = true;
}

void BlinkDetector::end_run() {
  if (!run_) return;
  cluster_.push_back(*run_);
  cluster_last_end_ = run_->end;
  run_.reset();
}

void BlinkDetector::close_cluster(std::vector<DetectionEvent>& out) {
  if (cluster_.empty()) return;
  const auto best = std::max_element(cluster_.begin(), cluster_.end(),
                                     [](const Run& a, const Run& b) { return a.peak < b.peak; });
  const std::int64_t len = best->end - best->start + 1;
  if (len >= min_len_ && len <= max_len_) {
    DetectionEvent ev;
    ev.kind = EventKind::blink;
    ev.t_start = time_of(best->start);
    ev.t_end = time_of(best->end + 1);
    ev.channels = best->channels;
    std::sort(ev.channels.begin(), ev.channels.end());
    ev.score = best->peak;
    out.push_back(std::move(ev));
  }
  cluster_.clear();
}

std::vector<DetectionEvent> BlinkDetector::process(const SignalBlock& block) {
  if (!config_error_.empty()) throw DetectorConfigError(config_error_);
  block.check();
  require_channels(cfg_.frontal, block, "blink");
  if (!started_) {
    started_ = true;
    t_origin_ = block.t0;
  }
  std::vector<DetectionEvent> out;
  const std::size_t nf = cfg_.frontal.size();
  for (std::size_t i = 0; i < block.samples(); ++i) {
    if (baseline_ready_) {
      double best_score = 0.0;
      int best_sign = 0;
      std::vector<int> hit;
      for (std::size_t c = 0; c < nf; ++c) {
        const double dev = block.data[static_cast<std::size_t>(cfg_.frontal[c])][i] - median_[c];
        const double thr = std::max(cfg_.blink_k * mad_[c], cfg_.blink_floor_uv);
        const double score = safe_ratio(std::abs(dev), thr);
        if (score > 1.0) {
          hit.push_back(cfg_.frontal[c]);
          if (score > best_score) {
            best_score = score;
            best_sign = dev > 0 ? 1 : -1;
          }
        }
      }
      if (!hit.empty()) {
        if (run_ && run_sign_ != best_sign) end_run();
        if (!cluster_.empty() && !run_ && n_ - cluster_last_end_ > separation_) close_cluster(out);
        if (!run_) {
          run_ = Run{n_, n_, 0.0, {}};
          run_sign_ = best_sign;
        }
        run_->end = n_;
        run_->peak = std::max(run_->peak, std::min(best_score, 1e12));
        for (int c : hit) {
          if (std::find(run_->channels.begin(), run_->channels.end(), c) == run_->channels.end()) {
            run_->channels.push_back(c);
          }
        }
      } else {
        end_run();
        if (!cluster_.empty() && n_ - cluster_last_end_ > separation_) close_cluster(out);
      }
    }

    for (std::size_t c = 0; c < nf; ++c) {
      history_[c][history_pos_] = block.data[static_cast<std::size_t>(cfg_.frontal[c])][i];
    }
    history_pos_ = (history_pos_ + 1) % static_cast<std::size_t>(window_);
    history_fill_ = std::min(history_fill_ + 1, static_cast<std::size_t>(window_));
    ++n_;
    if (n_ % update_every_ == 0 && n_ >= warmup_) update_baseline();
  }
  return out;
}

std::vector<DetectionEvent> BlinkDetector::finish() {
  std::vector<DetectionEvent> out;
  end_run();
  close_cluster(out);
  return out;
}

// ---------------------------------------------------------------- chew

ChewDetector::ChewDetector(const DetectorConfig& config, double fs) : cfg_(config), fs_(fs) {
  if (!(fs > 0.0)) throw DetectorConfigError("sample rate must be > 0");
  if (cfg_.chew_channels.empty()) {
    config_error_ = "chew detection needs at least one channel";
  } else if (static_cast<int>(cfg_.chew_channels.size()) < cfg_.chew_min_channels) {
    config_error_ = "chew detection needs at least chew_min_channels channels";
  } else if (fs < 100.0 || cfg_.chew_band_hi >= fs / 2.0) {
    config_error_ = "chew detection needs a sample rate of at least 100 SPS above twice the band edge";
  } else {
    band_ = design_bandpass(fs, cfg_.chew_band_lo, cfg_.chew_band_hi, 4, cfg_.chew_channels.size());
  }
  window_ = samples_for(cfg_.chew_window_s, fs);
  envelope_ = samples_for(cfg_.chew_envelope_s, fs);
  hop_ = samples_for(cfg_.chew_hop_s, fs);
  warmup_ = std::max<std::int64_t>(window_, std::llround(cfg_.chew_warmup_s * fs));
  hold_ = std::llround(cfg_.chew_hold_s * fs);
  baseline_len_ = static_cast<std::size_t>(std::max<long long>(1, std::llround(cfg_.chew_baseline_window_s / cfg_.chew_hop_s)));
  ch_.resize(cfg_.chew_channels.size());
  for (auto& c : ch_) {
    c.power_ring.assign(static_cast<std::size_t>(window_), 0.0);
    c.env_ring.assign(static_cast<std::size_t>(envelope_), 0.0);
  }
  involved_.assign(cfg_.chew_channels.size(), false);
}

void ChewDetector::evaluate(std::vector<DetectionEvent>& out) {
  const std::size_t nc = ch_.size();
  const double t = time_of(n_);
  std::vector<double> power(nc), env(nc), base(nc, 0.0);
  bool ready = n_ >= warmup_;
  for (std::size_t c = 0; c < nc; ++c) {
    power[c] = std::max(0.0, ch_[c].power_sum) / static_cast<double>(window_);
    env[c] = std::max(0.0, ch_[c].env_sum) / static_cast<double>(envelope_);
    if (ch_[c].baseline.size() < 8) {
      ready = false;
    } else {
      base[c] = median_of({ch_[c].baseline.begin(), ch_[c].baseline.end()});
    }
  }

  std::vector<double> ratio(nc, 0.0), env_ratio(nc, 0.0);
  if (ready) {
    for (std::size_t c = 0; c < nc; ++c) {
      ratio[c] = safe_ratio(power[c], base[c]);
      env_ratio[c] = safe_ratio(env[c], base[c]);
    }
    const double k = cfg_.chew_k;
    const double r_m = kth_largest(ratio, cfg_.chew_min_channels);
    const double e_m = kth_largest(env_ratio, cfg_.chew_min_channels);

    if (r_m > k && !active_) {
      active_ = true;
      start_time_ = t - static_cast<double>(envelope_) / fs_;
      last_activity_ = t;
      last_active_hop_ = n_;
      peak_ratio_ = 0.0;
      env_peak_ = 0.0;
      in_burst_ = false;
      burst_onsets_.clear();
      involved_.assign(nc, false);
    }
    if (active_) {
      if (r_m > k) last_active_hop_ = n_;
      if (e_m > k) last_activity_ = t;
      peak_ratio_ = std::max(peak_ratio_, std::min(r_m, 1e12));
      for (std::size_t c = 0; c < nc; ++c) {
        if (ratio[c] > k) involved_[c] = true;
      }
      env_peak_ = std::max(env_peak_, std::min(e_m, 1e12));
      const double thr = std::max(k, cfg_.chew_burst_fraction * env_peak_);
      if (!in_burst_ && e_m > thr) {
        in_burst_ = true;
        burst_onsets_.push_back(t);
      } else if (in_burst_ && e_m < 0.5 * thr) {
        in_burst_ = false;
      }
      if (r_m <= k && n_ - last_active_hop_ > hold_) close_episode(out);
    }
  }

  // Baselines learn only from quiet stretches.
  for (std::size_t c = 0; c < nc; ++c) {
    if (active_ || (ready && ratio[c] > cfg_.chew_k)) continue;
    auto& b = ch_[c].baseline;
    b.push_back(power[c]);
    if (b.size() > baseline_len_) b.pop_front();
  }
}

void ChewDetector::close_episode(std::vector<DetectionEvent>& out) {
  active_ = false;
  const std::size_t n = burst_onsets_.size();
  if (n < 2) return;
  const double span = burst_onsets_.back() - burst_onsets_.front();
  if (!(span > 0.0)) return;
  const double rate = static_cast<double>(n - 1) / span;
  const double tol = cfg_.chew_rate_tolerance;
  if (rate < cfg_.chew_rate_min_hz * (1.0 - tol) || rate > cfg_.chew_rate_max_hz * (1.0 + tol)) return;
  DetectionEvent ev;
  ev.kind = EventKind::chew;
  ev.t_start = std::max(start_time_, t_origin_);
  ev.t_end = std::max(last_activity_, ev.t_start + 1.0 / fs_);
  for (std::size_t c = 0; c < involved_.size(); ++c) {
    if (involved_[c]) ev.channels.push_back(cfg_.chew_channels[c]);
  }
  std::sort(ev.channels.begin(), ev.channels.end());
  ev.score = peak_ratio_ / cfg_.chew_k;
  out.push_back(std::move(ev));
}

std::vector<DetectionEvent> ChewDetector::process(const SignalBlock& block) {
  if (!config_error_.empty()) throw DetectorConfigError(config_error_);
  block.check();
  require_channels(cfg_.chew_channels, block, "chew");
  if (block.fs != fs_) throw DetectorConfigError("chew: block sample rate differs from detector rate");
  if (!started_) {
    started_ = true;
    t_origin_ = block.t0;
  }
  const std::size_t nc = ch_.size();
  const std::size_t ns = block.samples();
  std::vector<std::vector<double>> filtered(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    filtered[c] = block.data[static_cast<std::size_t>(cfg_.chew_channels[c])];
    band_.process(c, filtered[c]);
  }
  std::vector<DetectionEvent> out;
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t c = 0; c < nc; ++c) {
      auto& st = ch_[c];
      const double sq = filtered[c][i] * filtered[c][i];
      st.power_sum += sq - st.power_ring[ring_pos_];
      st.power_ring[ring_pos_] = sq;
      st.env_sum += sq - st.env_ring[env_pos_];
      st.env_ring[env_pos_] = sq;
    }
    ring_pos_ = (ring_pos_ + 1) % static_cast<std::size_t>(window_);
    env_pos_ = (env_pos_ + 1) % static_cast<std::size_t>(envelope_);
    // Running sums drift; resum exactly once per wrap.
    if (ring_pos_ == 0) {
      for (auto& st : ch_) st.power_sum = std::accumulate(st.power_ring.begin(), st.power_ring.end(), 0.0);
    }
    if (env_pos_ == 0) {
      for (auto& st : ch_) st.env_sum = std::accumulate(st.env_ring.begin(), st.env_ring.end(), 0.0);
    }
    ++n_;
    if (n_ % hop_ == 0 && n_ >= window_) evaluate(out);
  }
  return out;
}

std::vector<DetectionEvent> ChewDetector::finish() {
  std::vector<DetectionEvent> out;
  if (active_) close_episode(out);
  return out;
}

// ---------------------------------------------------------------- alpha

AlphaDetector::AlphaDetector(const DetectorConfig& config, double fs) : cfg_(config), fs_(fs) {
  if (!(fs > 0.0)) throw DetectorConfigError("sample rate must be > 0");
  if (cfg_.occipital.empty()) config_error_ = "alpha detection needs at least one occipital channel";
  if (fs < 64.0) config_error_ = "alpha detection needs a sample rate of at least 64 SPS";
  window_ = samples_for(cfg_.alpha_window_s, fs);
  hop_ = samples_for(cfg_.alpha_hop_s, fs);
  buffer_.resize(cfg_.occipital.size());
}

void AlphaDetector::evaluate(std::vector<DetectionEvent>& out) {
  SignalBlock win(fs_, buffer_.size(), static_cast<std::size_t>(window_));
  for (std::size_t c = 0; c < buffer_.size(); ++c) std::copy(buffer_[c].begin(), buffer_[c].end(), win.data[c].begin());
  const auto idx = alpha_index(win);
  const double m = std::accumulate(idx.begin(), idx.end(), 0.0) / static_cast<double>(idx.size());
  last_index_ = m;
  const double t = time_of(n_);
  if (!active_) {
    if (m > cfg_.alpha_enter) {
      active_ = true;
      start_time_ = t;
      score_sum_ = m;
      score_count_ = 1;
    }
    return;
  }
  if (m < cfg_.alpha_exit) {
    active_ = false;
    if (t - start_time_ >= cfg_.alpha_min_s - 1e-9) {
      DetectionEvent ev;
      ev.kind = EventKind::alpha;
      ev.t_start = start_time_;
      ev.t_end = t;
      ev.channels = cfg_.occipital;
      std::sort(ev.channels.begin(), ev.channels.end());
      ev.score = score_sum_ / score_count_;
      out.push_back(std::move(ev));
    }
    return;
  }
  score_sum_ += m;
  ++score_count_;
}

std::vector<DetectionEvent> AlphaDetector::process(const SignalBlock& block) {
  if (!config_error_.empty()) throw DetectorConfigError(config_error_);
  block.check();
  require_channels(cfg_.occipital, block, "alpha");
  if (!started_) {
    started_ = true;
    t_origin_ = block.t0;
  }
  std::vector<DetectionEvent> out;
  for (std::size_t i = 0; i < block.samples(); ++i) {
    for (std::size_t c = 0; c < buffer_.size(); ++c) {
      auto& buf = buffer_[c];
      buf.push_back(block.data[static_cast<std::size_t>(cfg_.occipital[c])][i]);
      if (static_cast<std::int64_t>(buf.size()) > window_) buf.pop_front();
    }
    ++n_;
    if (n_ % hop_ == 0 && n_ >= window_) evaluate(out);
  }
  return out;
}

std::vector<DetectionEvent> AlphaDetector::finish() {
  std::vector<DetectionEvent> out;
  if (active_) {
    const double t = time_of(n_);
    active_ = false;
    if (t - start_time_ >= cfg_.alpha_min_s - 1e-9) {
      DetectionEvent ev;
      ev.kind = EventKind::alpha;
      ev.t_start = start_time_;
      ev.t_end = t;
      ev.channels = cfg_.occipital;
      std::sort(ev.channels.begin(), ev.channels.end());
      ev.score = score_sum_ / score_count_;
      out.push_back(std::move(ev));
    }
  }
  return out;
}

// ---------------------------------------------------------------- glue

std::vector<DetectionEvent> detect_blink(DetectorState& state, const SignalBlock& bandpassed) {
  return state.blink.process(bandpassed);
}

std::vector<DetectionEvent> detect_chew(DetectorState& state, const SignalBlock& block) {
  return state.chew.process(block);
}

std::vector<DetectionEvent> detect_alpha(DetectorState& state, const SignalBlock& block) {
  return state.alpha.process(block);
}

DetectorBank::DetectorBank(const DetectorConfig& config, double fs, DetectorSelection selection,
                           bool input_bandpassed)
    : fs_(fs), selection_(selection), input_bandpassed_(input_bandpassed), state_(config, fs) {
  if (!input_bandpassed_ && fs_ > 60.0) {
    blink_delay_s_ = design_bandpass(fs_, 1.0, 30.0, 4, 1).group_delay_s(kBlinkReferenceHz, fs_);
  }
}

std::vector<DetectionEvent> DetectorBank::compensate(std::vector<DetectionEvent> blinks) const {
  for (auto& e : blinks) {
    e.t_start -= blink_delay_s_;
    e.t_end -= blink_delay_s_;
  }
  return blinks;
}

std::vector<DetectionEvent> DetectorBank::process(const SignalBlock& block) {
  std::vector<DetectionEvent> events;
  auto append = [&events](std::vector<DetectionEvent> more) {
    events.insert(events.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  };
  if (selection_.blink) {
    if (input_bandpassed_) {
      append(state_.blink.process(block));
    } else {
      if (!prefilter_) prefilter_ = design_bandpass(fs_, 1.0, 30.0, 4, block.channels());
      append(compensate(state_.blink.process(filter_block(*prefilter_, block))));
    }
  }
  if (selection_.chew) append(state_.chew.process(block));
  if (selection_.alpha) append(state_.alpha.process(block));
  sort_events(events);
  return events;
}

std::vector<DetectionEvent> DetectorBank::finish() {
  std::vector<DetectionEvent> events;
  auto append = [&events](std::vector<DetectionEvent> more) {
    events.insert(events.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  };
  if (selection_.blink) append(input_bandpassed_ ? state_.blink.finish() : compensate(state_.blink.finish()));
  if (selection_.chew) append(state_.chew.finish());
  if (selection_.alpha) append(state_.alpha.finish());
  sort_events(events);
  return events;
}

void sort_events(std::vector<DetectionEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const DetectionEvent& a, const DetectionEvent& b) {
    if (a.t_start != b.t_start) return a.t_start < b.t_start;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
}

}  // namespace pieeg
