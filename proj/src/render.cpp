#include "eventness/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "eventness/errors.hpp"

namespace eventness::render {

namespace {

unsigned char to_byte(double v) {
    const double scaled = std::round(255.0 * std::clamp(v, 0.0, 1.0));
    return static_cast<unsigned char>(scaled);
}

std::size_t clamp_index(double v, std::size_t n) {
    if (v < 0.0) return 0;
    if (v >= static_cast<double>(n)) return n - 1;
    return static_cast<std::size_t>(v);
}

}  // namespace

Image spectrogram_image(const dsp::TriChannelSpectrogram& tri) {
    const std::size_t n_mels = tri.values.dim(1);
    const std::size_t n_frames = tri.values.dim(2);
    Image img;
    img.width = n_frames;
    img.height = n_mels;
    img.rgb.assign(n_frames * n_mels * 3, 0);
    for (std::size_t y = 0; y < n_mels; ++y) {
        const std::size_t band = n_mels - 1 - y;  // low frequencies at the bottom
        for (std::size_t x = 0; x < n_frames; ++x) {
            unsigned char* p = img.px(x, y);
            p[0] = to_byte(tri.values.at(2, band, x));
            p[1] = to_byte(tri.values.at(1, band, x));
            p[2] = to_byte(tri.values.at(0, band, x));
        }
    }
    return img;
}

PixelBox event_pixel_box(const EventRecord& e, double frame_to_seconds, std::size_t width,
                         std::size_t height) {
    if (width == 0 || height == 0) throw std::invalid_argument("empty image");
    if (!(frame_to_seconds > 0.0)) throw std::invalid_argument("frame_to_seconds must be positive");

    PixelBox b;
    b.x0 = clamp_index(std::floor(e.onset / frame_to_seconds), width);
    const double t1 = std::ceil(e.offset / frame_to_seconds) - 1.0;
    b.x1 = std::max(b.x0, clamp_index(t1, width));

    double band_lo = 0.0, band_hi = static_cast<double>(height);
    if (e.has_band) {
        band_lo = e.band_lo;
        band_hi = e.band_hi;
    }
    const std::size_t lo = clamp_index(std::floor(band_lo), height);
    const std::size_t hi = std::max(lo, clamp_index(std::ceil(band_hi) - 1.0, height));
    b.y0 = height - 1 - hi;
    b.y1 = height - 1 - lo;
    return b;
}

void draw_box_outline(Image& img, const PixelBox& b, unsigned char r, unsigned char g,
                      unsigned char b_) {
    auto put = [&](std::size_t x, std::size_t y) {
        unsigned char* p = img.px(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b_;
    };
    for (std::size_t x = b.x0; x <= b.x1; ++x) {
        put(x, b.y0);
        put(x, b.y1);
    }
    for (std::size_t y = b.y0; y <= b.y1; ++y) {
        put(b.x0, y);
        put(b.x1, y);
    }
}

Image render_events(const Waveform& w, const dsp::SpectrogramParams& params,
                    const std::vector<EventRecord>& refs, const std::vector<EventRecord>& dets) {
    const dsp::TriChannelSpectrogram tri = dsp::frontend(w, params);
    Image img = spectrogram_image(tri);
    for (const EventRecord& e : refs) {
        draw_box_outline(img, event_pixel_box(e, tri.frame_to_seconds, img.width, img.height), 0,
                         255, 0);
    }
    for (const EventRecord& e : dets) {
        const unsigned char red = e.has_score ? to_byte(e.score) : 255;
        draw_box_outline(img, event_pixel_box(e, tri.frame_to_seconds, img.width, img.height), red,
                         0, 0);
    }
    return img;
}

void write_ppm(const std::string& path, const Image& img) {
    if (img.rgb.size() != img.width * img.height * 3) {
        throw std::invalid_argument("image buffer size mismatch");
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp);
        out << "P6\n" << img.width << " " << img.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(img.rgb.data()),
                  static_cast<std::streamsize>(img.rgb.size()));
        if (!out) throw DataError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw DataError("cannot rename " + tmp + " to " + path);
    }
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw DataError(path + ": not a P6 PPM");
    std::size_t w = 0, h = 0;
    int maxval = 0;
    in >> w >> h >> maxval;
    if (!in || maxval != 255 || w == 0 || h == 0) throw DataError(path + ": bad PPM header");
    in.get();  // single whitespace byte after maxval
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.assign(w * h * 3, 0);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
        throw DataError(path + ": truncated pixel data");
    }
    return img;
}

}  // namespace eventness::render
