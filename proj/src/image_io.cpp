#include "memmc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <jpeglib.h>

#include "memmc/errors.hpp"

namespace memmc {

namespace {

Image<float> from_interleaved(const std::vector<unsigned char>& buf, int h, int w, int ch) {
    Image<float> img(h, w, ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                img.planes[static_cast<std::size_t>(c)](y, x) =
                    static_cast<float>(buf[static_cast<std::size_t>((y * w + x) * ch + c)]) / 255.0f;
            }
        }
    }
    return img;
}

Image<float> read_png_file(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw DatasetError("unreadable PNG: " + path + " (" + png.message + ")");
    }
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const int ch = color ? 3 : 1;
    std::vector<unsigned char> buf(static_cast<std::size_t>(PNG_IMAGE_SIZE(png)));
    if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
        throw DatasetError("PNG decode failed: " + path + " (" + png.message + ")");
    }
    return from_interleaved(buf, static_cast<int>(png.height), static_cast<int>(png.width), ch);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::string path;
};

[[noreturn]] void jpeg_error_exit(j_common_ptr cinfo) {
    char msg[JMSG_LENGTH_MAX];
    (*cinfo->err->format_message)(cinfo, msg);
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    const std::string path = mgr->path;
    jpeg_destroy(cinfo);
    throw DatasetError("JPEG decode failed: " + path + " (" + msg + ")");
}

Image<float> read_jpeg_file(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DatasetError("missing file: " + path);
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    err.path = path;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    jpeg_create_decompress(&cinfo);
    try {
        jpeg_stdio_src(&cinfo, fp);
        jpeg_read_header(&cinfo, TRUE);
        cinfo.out_color_space = (cinfo.num_components >= 3) ? JCS_RGB : JCS_GRAYSCALE;
        jpeg_start_decompress(&cinfo);
        const int w = static_cast<int>(cinfo.output_width);
        const int h = static_cast<int>(cinfo.output_height);
        const int ch = cinfo.output_components;
        std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * ch);
        while (cinfo.output_scanline < cinfo.output_height) {
            unsigned char* row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * ch;
            jpeg_read_scanlines(&cinfo, &row, 1);
        }
        jpeg_finish_decompress(&cinfo);
        jpeg_destroy_decompress(&cinfo);
        std::fclose(fp);
        return from_interleaved(buf, h, w, ch);
    } catch (...) {
        std::fclose(fp);
        throw;
    }
}

}  // namespace

Image<float> read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatasetError("missing file: " + path);
    unsigned char magic[4] = {0, 0, 0, 0};
    f.read(reinterpret_cast<char*>(magic), 4);
    f.close();
    if (magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') {
        return read_png_file(path);
    }
    if (magic[0] == 0xFF && magic[1] == 0xD8) {
        return read_jpeg_file(path);
    }
    throw DatasetError("unsupported image format (expected PNG or JPEG): " + path);
}

void write_png(const std::string& path, const Image<float>& image) {
    const int h = static_cast<int>(image.height());
    const int w = static_cast<int>(image.width());
    const int ch = static_cast<int>(image.channels());
    if (ch != 1 && ch != 3) throw ValueError("write_png: need 1 or 3 channels");
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w * ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                const float v = std::clamp(image.planes[static_cast<std::size_t>(c)](y, x), 0.0f, 1.0f);
                buf[static_cast<std::size_t>((y * w + x) * ch + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(w);
    png.height = static_cast<png_uint_32>(h);
    png.format = (ch == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw DatasetError("PNG write failed: " + path + " (" + png.message + ")");
    }
}

}  // namespace memmc
