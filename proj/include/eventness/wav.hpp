#pragma once

#include <string>
#include <vector>

namespace eventness::dsp {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 0;

    double duration() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

// PCM 16-bit mono little-endian RIFF only; samples map to [-1,1) via /32768.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace eventness::dsp
