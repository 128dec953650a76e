#include "advaug/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "advaug/errors.hpp"

namespace advaug::data {

namespace {

float luminance(double r, double g, double b) { return static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b); }

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw DataError("cannot read " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const png_byte* p = &buf[4 * i];
    const double a = p[3] / 255.0;
    // Composite over a white page.
    auto over = [a](png_byte c) { return (c / 255.0) * a + (1.0 - a); };
    out.pixels[i] = luminance(over(p[0]), over(p[1]), over(p[2]));
  }
  return out;
}

// Next whitespace-separated PNM header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string magic = pnm_token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw DataError(path.string() + ": unsupported PNM type '" + magic + "'");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(pnm_token(in));
    height = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PNM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) throw DataError(path.string() + ": bad PNM header");
  const bool color = magic == "P3" || magic == "P6";
  const bool ascii = magic == "P2" || magic == "P3";
  const int channels = color ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<double> values(count);
  if (ascii) {
    for (auto& v : values) {
      if (!(in >> v)) throw DataError(path.string() + ": truncated PNM data");
    }
  } else {
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(path.string() + ": truncated PNM data");
    for (std::size_t i = 0; i < count; ++i) values[i] = bytes == 2 ? raw[2 * i] * 256.0 + raw[2 * i + 1] : raw[i];
  }
  Image out(height, width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (color)
      out.pixels[i] = luminance(values[3 * i] / maxval, values[3 * i + 1] / maxval, values[3 * i + 2] / maxval);
    else
      out.pixels[i] = static_cast<float>(values[i] / maxval);
  }
  return out;
}

}  // namespace

bool is_supported_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("no such image file: " + path.string());
  Image img = lower_extension(path) == ".png" ? read_png(path) : read_pnm(path);
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) throw DataError("cannot write an empty image to " + path.string());
  std::vector<png_byte> buf(image.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write " + path.string() + ": " + img.message);
}

Image make_grid(const std::vector<std::vector<Image>>& rows) {
  constexpr int kGutter = 4;
  int height = kGutter, width = kGutter;
  for (const auto& row : rows) {
    int row_h = 0, row_w = kGutter;
    for (const auto& im : row) {
      row_h = std::max(row_h, im.height);
      row_w += im.width + kGutter;
    }
    height += row_h + kGutter;
    width = std::max(width, row_w);
  }
  Image grid(height, width, 0.5f);
  int y0 = kGutter;
  for (const auto& row : rows) {
    int x0 = kGutter, row_h = 0;
    for (const auto& im : row) {
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) grid.at(y0 + y, x0 + x) = std::clamp(im.at(y, x), 0.0f, 1.0f);
      x0 += im.width + kGutter;
      row_h = std::max(row_h, im.height);
    }
    y0 += row_h + kGutter;
  }
  return grid;
}

}  // namespace advaug::data
