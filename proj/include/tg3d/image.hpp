#pragma once

#include "tg3d/common.hpp"

#include <string>
#include <vector>

namespace tg3d {

// RGB image, values in [0,1], interleaved row-major: idx = (y*w + x)*3 + c.
struct Image {
    int h = 0;
    int w = 0;
    Vec px;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(Vec::Zero(h_ * w_ * 3)) {}

    double& at(int y, int x, int c) { return px[(static_cast<long>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<long>(y) * w + x) * 3 + c]; }

    long size() const { return px.size(); }

    Image flipped_horizontal() const {
        Image out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    out.at(y, x, c) = at(y, w - 1 - x, c);
        return out;
    }

    void clamp01() { px = px.cwiseMax(0.0).cwiseMin(1.0); }
};

double mean_abs_diff(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);
// Mean HSV-style saturation: (max-min)/max per pixel, 0 where max is 0.
double mean_saturation(const Image& img);

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

// rows*cols tiling of equally sized images, row-major order.
Image make_grid(const std::vector<Image>& imgs, int cols);

} // namespace tg3d
