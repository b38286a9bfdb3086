#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eventness/tensor.hpp"
#include "eventness/wav.hpp"

namespace eventness::dsp {

struct SpectrogramParams {
    std::size_t n_fft = 2048;
    std::size_t hop = 1024;
    std::size_t n_mels = 128;
    std::string window_fn = "hann";
    double f_min = 0.0;
    double f_max = 0.0;  // 0 means sample_rate / 2
};

struct MelSpectrogram {
    ad::Tensor values;  // [n_mels, n_frames], log power
    SpectrogramParams params;
    int sample_rate = 0;
};

struct TriChannelSpectrogram {
    ad::Tensor values;  // [3, n_mels, n_frames], each value in [0,1]
    double frame_to_seconds = 0.0;
    std::vector<double> band_centers_hz;  // size n_mels
};

// 1 + floor((len - n_fft)/hop); throws "signal too short" when len < n_fft.
std::size_t spectrogram_frames(std::size_t n_samples, const SpectrogramParams& p);

// mel(f) = 2595 log10(1 + f/700) and its inverse (HTK).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels + 2 edge frequencies, equally spaced on the mel scale over
// [f_min, f_max]; band j peaks at entry j + 1.
std::vector<double> mel_edge_frequencies(const SpectrogramParams& p, int sample_rate);

// [n_fft/2+1, n_frames] magnitudes; column t covers samples [t*hop, t*hop+n_fft).
ad::Tensor stft_magnitude(const Waveform& w, const SpectrogramParams& p);

// [n_mels, n_fft/2+1] triangular filters, peak amplitude 1.
ad::Tensor mel_filterbank(const SpectrogramParams& p, int sample_rate);

// ln(filterbank * |stft|^2 + 1e-10)
MelSpectrogram log_mel(const Waveform& w, const SpectrogramParams& p);

// (m - min)/(max - min); constant input maps to all zeros.
MelSpectrogram normalize_unit(const MelSpectrogram& m);

// Three overlapping tents over [0,1]: centers {1/6, 1/2, 5/6}, half-width 1/3.
TriChannelSpectrogram tri_channel_map(const MelSpectrogram& normalized);

// Full front end: log_mel -> normalize_unit -> tri_channel_map.
TriChannelSpectrogram frontend(const Waveform& w, const SpectrogramParams& p);

// Smallest contiguous band interval (inclusive indices) holding `mass` of the
// band-marginal linear energy over frame columns [t_lo, t_hi); ties go to the
// lowest start. Un-logs the stored values. A zero-energy marginal yields the
// full band range.
std::pair<std::size_t, std::size_t> band_energy_extent(const MelSpectrogram& mel,
                                                       double mass = 0.95, std::size_t t_lo = 0,
                                                       std::size_t t_hi = SIZE_MAX);

}  // namespace eventness::dsp
