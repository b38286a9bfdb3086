#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "eventness/dsp_frontend.hpp"
#include "eventness/records.hpp"
#include "eventness/wav.hpp"

namespace eventness::render {

using dsp::Waveform;

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<unsigned char> rgb;  // row-major, top row first, 3 bytes per pixel

    unsigned char* px(std::size_t x, std::size_t y) { return rgb.data() + 3 * (y * width + x); }
    const unsigned char* px(std::size_t x, std::size_t y) const {
        return rgb.data() + 3 * (y * width + x);
    }
};

// Tri-channel map as RGB, one pixel per (frame, band) cell. Time runs left to
// right, band 0 sits on the bottom row. Intensity channels (low, mid, high)
// map to (blue, green, red).
Image spectrogram_image(const dsp::TriChannelSpectrogram& tri);

// Inclusive pixel bounds of an event's rectangle on such an image.
struct PixelBox {
    std::size_t x0 = 0, x1 = 0;
    std::size_t y0 = 0, y1 = 0;
};

// Quantizes an event to pixels: frames [onset, offset) / frame_to_seconds map
// to columns, band extent to rows (full height when the record carries none).
PixelBox event_pixel_box(const EventRecord& e, double frame_to_seconds, std::size_t width,
                         std::size_t height);

void draw_box_outline(Image& img, const PixelBox& b, unsigned char r, unsigned char g,
                      unsigned char b_);

// Full render: spectrogram, green reference outlines, then red detection
// outlines whose red channel scales with the record's score (255 when absent).
Image render_events(const Waveform& w, const dsp::SpectrogramParams& params,
                    const std::vector<EventRecord>& refs, const std::vector<EventRecord>& dets);

// Binary P6: "P6\n<w> <h>\n255\n" then width*height*3 bytes. Temp-and-rename.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

}  // namespace eventness::render
