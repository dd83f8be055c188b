#include "png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <string>
#include <vector>

namespace hypermatch::tools {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

}  // namespace

void write_png_gray(const GrayImage& img, const std::filesystem::path& path) {
  if (img.size() == 0) fail(ErrorCategory::argument, "write_png_gray: empty image");
  std::vector<png_byte> pixels(static_cast<std::size_t>(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i) pixels[static_cast<std::size_t>(i)] = static_cast<png_byte>(std::min<int>(img.data()[i], 255));
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.cols());
  image.height = static_cast<png_uint_32>(img.rows());
  image.format = PNG_FORMAT_GRAY;
  write_atomically(path, [&](std::ostream& os) {
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(image, size, 0, pixels.data(), 0, nullptr)) {
      fail(ErrorCategory::io, "png encode failed for " + path.string());
    }
    std::vector<char> buf(size);
    if (!png_image_write_to_memory(&image, buf.data(), &size, 0, pixels.data(), 0, nullptr)) {
      fail(ErrorCategory::io, "png encode failed for " + path.string() + ": " + image.message);
    }
    os.write(buf.data(), static_cast<std::streamsize>(size));
  });
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail(ErrorCategory::format, path.string() + ": cannot decode PNG: " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCategory::format, path.string() + ": cannot decode PNG: " + image.message);
  }
  GrayImage img(image.height, image.width);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = pixels[static_cast<std::size_t>(i)];
  return img;
}

MaskMatrix read_mask(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return to_mask(read_png_gray(path));
  if (ext == ".pgm") return to_mask(read_pgm(path));
  fail(ErrorCategory::format, path.string() + ": unsupported mask format (expected .png or .pgm)");
}

}  // namespace hypermatch::tools
