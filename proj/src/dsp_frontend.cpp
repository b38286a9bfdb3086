#include "eventness/dsp_frontend.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>

#include "eventness/errors.hpp"

namespace eventness::dsp {

namespace {

constexpr double kLogEps = 1e-10;

// FFTW plan creation is not thread-safe; execution on a plan's own buffers is
// confined to one RealFft instance, so callers keep one instance per thread.
std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n) {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        in_ = fftw_alloc_real(n);
        out_ = fftw_alloc_complex(n / 2 + 1);
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    }

    ~RealFft() {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }

    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    // writes n/2+1 magnitudes
    void magnitudes(const double* input, double* out_mags) {
        for (std::size_t i = 0; i < n_; ++i) in_[i] = input[i];
        fftw_execute(plan_);
        for (std::size_t k = 0; k <= n_ / 2; ++k) {
            out_mags[k] = std::hypot(out_[k][0], out_[k][1]);
        }
    }

private:
    std::size_t n_;
    double* in_;
    fftw_complex* out_;
    fftw_plan plan_;
};

std::vector<double> make_window(const SpectrogramParams& p) {
    std::vector<double> w(p.n_fft, 1.0);
    if (p.window_fn == "hann") {
        for (std::size_t i = 0; i < p.n_fft; ++i) {
            w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(p.n_fft));
        }
    } else if (p.window_fn != "rectangular") {
        throw DataError("unknown window function: " + p.window_fn);
    }
    return w;
}

void check_params(const SpectrogramParams& p, int sample_rate) {
    if (p.n_fft == 0 || p.hop == 0 || p.hop > p.n_fft) {
        throw DataError("invalid spectrogram params: need 0 < hop <= n_fft");
    }
    if (p.n_mels < 1) throw DataError("invalid spectrogram params: n_mels must be >= 1");
    const double nyquist = static_cast<double>(sample_rate) / 2.0;
    const double f_max = p.f_max > 0.0 ? p.f_max : nyquist;
    if (!(p.f_min < f_max) || f_max > nyquist) {
        throw DataError("invalid spectrogram params: need f_min < f_max <= sample_rate/2");
    }
}

}  // namespace

std::size_t spectrogram_frames(std::size_t n_samples, const SpectrogramParams& p) {
    if (n_samples < p.n_fft) throw DataError("signal too short");
    return 1 + (n_samples - p.n_fft) / p.hop;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_edge_frequencies(const SpectrogramParams& p, int sample_rate) {
    check_params(p, sample_rate);
    const double f_max = p.f_max > 0.0 ? p.f_max : static_cast<double>(sample_rate) / 2.0;
    const double m_lo = hz_to_mel(p.f_min);
    const double m_hi = hz_to_mel(f_max);
    std::vector<double> edges(p.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(p.n_mels + 1);
        edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * frac);
    }
    return edges;
}

ad::Tensor stft_magnitude(const Waveform& w, const SpectrogramParams& p) {
    check_params(p, w.sample_rate);
    const std::size_t n_frames = spectrogram_frames(w.samples.size(), p);
    const std::size_t n_bins = p.n_fft / 2 + 1;
    const std::vector<double> window = make_window(p);

    ad::Tensor out({n_bins, n_frames});
    RealFft fft(p.n_fft);
    std::vector<double> frame(p.n_fft);
    std::vector<double> mags(n_bins);
    for (std::size_t t = 0; t < n_frames; ++t) {
        const double* src = w.samples.data() + t * p.hop;
        for (std::size_t i = 0; i < p.n_fft; ++i) frame[i] = src[i] * window[i];
        fft.magnitudes(frame.data(), mags.data());
        for (std::size_t k = 0; k < n_bins; ++k) out.at(k, t) = mags[k];
    }
    return out;
}

ad::Tensor mel_filterbank(const SpectrogramParams& p, int sample_rate) {
    check_params(p, sample_rate);
    const std::size_t n_bins = p.n_fft / 2 + 1;
    const std::vector<double> edges = mel_edge_frequencies(p, sample_rate);

    ad::Tensor fb({p.n_mels, n_bins});
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(p.n_fft);
    for (std::size_t m = 0; m < p.n_mels; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        bool any = false;
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            double v = 0.0;
            if (f > left && f < center) {
                v = (f - left) / (center - left);
            } else if (f == center) {
                v = 1.0;
            } else if (f > center && f < right) {
                v = (right - f) / (right - center);
            }
            if (v > 0.0) any = true;
            fb.at(m, k) = v;
        }
        if (!any) throw DataError("degenerate filterbank");
    }
    return fb;
}

MelSpectrogram log_mel(const Waveform& w, const SpectrogramParams& p) {
    const ad::Tensor mags = stft_magnitude(w, p);
    const ad::Tensor fb = mel_filterbank(p, w.sample_rate);
    const std::size_t n_bins = mags.dim(0), n_frames = mags.dim(1);

    MelSpectrogram m;
    m.params = p;
    m.sample_rate = w.sample_rate;
    m.values = ad::Tensor({p.n_mels, n_frames});
    for (std::size_t b = 0; b < p.n_mels; ++b) {
        for (std::size_t t = 0; t < n_frames; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n_bins; ++k) {
                const double mag = mags.at(k, t);
                acc += fb.at(b, k) * mag * mag;
            }
            m.values.at(b, t) = std::log(acc + kLogEps);
        }
    }
    return m;
}

MelSpectrogram normalize_unit(const MelSpectrogram& m) {
    double lo = m.values[0], hi = m.values[0];
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        lo = std::min(lo, m.values[i]);
        hi = std::max(hi, m.values[i]);
    }
    MelSpectrogram out;
    out.params = m.params;
    out.sample_rate = m.sample_rate;
    out.values = ad::Tensor(m.values.shape());
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = (m.values[i] - lo) * inv;
    }
    return out;  // constant input stays all zeros
}

TriChannelSpectrogram tri_channel_map(const MelSpectrogram& normalized) {
    static constexpr double kCenters[3] = {1.0 / 6.0, 0.5, 5.0 / 6.0};
    static constexpr double kHalfWidth = 1.0 / 3.0;

    const std::size_t n_mels = normalized.values.dim(0);
    const std::size_t n_frames = normalized.values.dim(1);
    TriChannelSpectrogram out;
    out.values = ad::Tensor({3, n_mels, n_frames});
    out.frame_to_seconds = static_cast<double>(normalized.params.hop) /
                           static_cast<double>(normalized.sample_rate);
    const std::vector<double> edges = mel_edge_frequencies(normalized.params, normalized.sample_rate);
    out.band_centers_hz.assign(edges.begin() + 1, edges.end() - 1);

    for (std::size_t i = 0; i < normalized.values.size(); ++i) {
        const double x = normalized.values[i];
        if (!(x >= 0.0 && x <= 1.0)) throw DataError("unnormalized input");
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = 1.0 - std::abs(x - kCenters[c]) / kHalfWidth;
            out.values[c * n_mels * n_frames + i] = v > 0.0 ? v : 0.0;
        }
    }
    return out;
}

TriChannelSpectrogram frontend(const Waveform& w, const SpectrogramParams& p) {
    return tri_channel_map(normalize_unit(log_mel(w, p)));
}

std::pair<std::size_t, std::size_t> band_energy_extent(const MelSpectrogram& mel, double mass,
                                                       std::size_t t_lo, std::size_t t_hi) {
    if (!(mass > 0.0 && mass <= 1.0)) throw std::invalid_argument("mass must be in (0, 1]");
    const std::size_t n_bands = mel.values.dim(0);
    const std::size_t n_frames = mel.values.dim(1);
    if (t_hi > n_frames) t_hi = n_frames;
    if (t_lo >= t_hi) throw std::invalid_argument("empty frame range");

    std::vector<double> marginal(n_bands, 0.0);
    double total = 0.0;
    for (std::size_t b = 0; b < n_bands; ++b) {
        for (std::size_t t = t_lo; t < t_hi; ++t) {
            const double p = std::exp(mel.values.at(b, t)) - kLogEps;
            if (p > 0.0) marginal[b] += p;
        }
        total += marginal[b];
    }
    if (total <= 0.0) return {0, n_bands - 1};

    // minimal window holding mass * total; first window wins ties
    const double target = mass * total;
    std::size_t best_lo = 0, best_hi = n_bands - 1;
    std::size_t lo = 0;
    double sum = 0.0;
    for (std::size_t hi = 0; hi < n_bands; ++hi) {
        sum += marginal[hi];
        while (lo < hi && sum - marginal[lo] >= target) sum -= marginal[lo++];
        if (sum >= target && hi - lo < best_hi - best_lo) {
            best_lo = lo;
            best_hi = hi;
        }
    }
    return {best_lo, best_hi};
}

}  // namespace eventness::dsp
