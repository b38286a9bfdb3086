#include "eventness/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "eventness/errors.hpp"

namespace eventness::dsp {

namespace {

std::uint32_t u32_at(const std::string& b, std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, b.data() + off, 4);
    return v;
}

std::uint16_t u16_at(const std::string& b, std::size_t off) {
    std::uint16_t v;
    std::memcpy(&v, b.data() + off, 2);
    return v;
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open wav file: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0) {
        throw DataError("not a RIFF wave file: " + path);
    }

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    Waveform w;

    std::size_t off = 12;
    while (off + 8 <= buf.size()) {
        const std::string id = buf.substr(off, 4);
        const std::uint32_t len = u32_at(buf, off + 4);
        const std::size_t body = off + 8;
        if (body + len > buf.size()) throw DataError("truncated wav chunk in " + path);
        if (id == "fmt ") {
            if (len < 16) throw DataError("malformed fmt chunk in " + path);
            format = u16_at(buf, body);
            channels = u16_at(buf, body + 2);
            rate = u32_at(buf, body + 4);
            bits = u16_at(buf, body + 14);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw DataError("wav data before fmt chunk in " + path);
            if (format != 1 || bits != 16) {
                throw DataError("unsupported wav format (need PCM 16-bit): " + path);
            }
            if (channels != 1) throw DataError("unsupported wav format (need mono): " + path);
            const std::size_t n = len / 2;
            w.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::int16_t s;
                std::memcpy(&s, buf.data() + body + 2 * i, 2);
                w.samples[i] = static_cast<double>(s) / 32768.0;
            }
            w.sample_rate = static_cast<int>(rate);
            return w;
        }
        off = body + len + (len & 1);  // chunks are word-aligned
    }
    throw DataError("wav file has no data chunk: " + path);
}

void write_wav(const std::string& path, const Waveform& w) {
    if (w.sample_rate <= 0) throw DataError("wav write needs a positive sample rate");
    const std::string tmp = path + ".tmp";
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open wav file for writing: " + tmp);

    const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    const std::uint32_t riff_len = 36 + data_len;
    const std::uint32_t rate = static_cast<std::uint32_t>(w.sample_rate);
    const std::uint32_t byte_rate = rate * 2;

    auto put_u32 = [&os](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u16 = [&os](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };

    os.write("RIFF", 4);
    put_u32(riff_len);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_u32(16);
    put_u16(1);  // PCM
    put_u16(1);  // mono
    put_u32(rate);
    put_u32(byte_rate);
    put_u16(2);   // block align
    put_u16(16);  // bits
    os.write("data", 4);
    put_u32(data_len);
    for (double s : w.samples) {
        double scaled = std::round(s * 32768.0);
        if (scaled > 32767.0) scaled = 32767.0;
        if (scaled < -32768.0) scaled = -32768.0;
        const std::int16_t q = static_cast<std::int16_t>(scaled);
        os.write(reinterpret_cast<const char*>(&q), 2);
    }
    if (!os) throw DataError("wav write failed: " + tmp);
    os.close();
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw DataError("cannot rename " + tmp + " to " + path);
    }
}

}  // namespace eventness::dsp
