#include "tg3d/image.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <vector>

namespace tg3d {

double mean_abs_diff(const Image& a, const Image& b) {
    check(a.px.size() == b.px.size(), "mean_abs_diff: size mismatch");
    return (a.px - b.px).cwiseAbs().mean();
}

double psnr(const Image& a, const Image& b) {
    check(a.px.size() == b.px.size(), "psnr: size mismatch");
    double mse = (a.px - b.px).squaredNorm() / static_cast<double>(a.px.size());
    if (mse <= 0.0)
        return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

double mean_saturation(const Image& img) {
    double acc = 0.0;
    long n = static_cast<long>(img.h) * img.w;
    for (long i = 0; i < n; ++i) {
        double r = img.px[i * 3 + 0], g = img.px[i * 3 + 1], b = img.px[i * 3 + 2];
        double mx = std::max({r, g, b});
        double mn = std::min({r, g, b});
        if (mx > 1e-12)
            acc += (mx - mn) / mx;
    }
    return acc / static_cast<double>(n);
}

void write_png(const Image& img, const std::string& path) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            // OpenCV is BGR
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(y, x, 2 - c), 0.0, 1.0);
                px[c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    check(cv::imwrite(path, m), "write_png: failed to write " + path);
}

Image read_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    check(!m.empty(), "read_png: failed to read " + path);
    Image img(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<double>(px[2 - c]) / 255.0;
        }
    return img;
}

Image make_grid(const std::vector<Image>& imgs, int cols) {
    check(!imgs.empty(), "make_grid: empty");
    int h = imgs[0].h, w = imgs[0].w;
    int rows = static_cast<int>((imgs.size() + cols - 1) / cols);
    Image grid(rows * h, cols * w);
    for (size_t i = 0; i < imgs.size(); ++i) {
        int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    grid.at(r * h + y, c * w + x, ch) = imgs[i].at(y, x, ch);
    }
    return grid;
}

} // namespace tg3d
