#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include <jpeglib.h>

#include "pcbae/dataset.hpp"

using namespace pcbae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pcbae_test_dataset" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

Tensor gradient_image(std::size_t h, std::size_t w) {
  Tensor t({1, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i % 256) / 255.0f;
  return t;
}

void write_gray_jpeg(const fs::path& path, std::size_t w, std::size_t h, std::uint8_t value) {
  jpeg_compress_struct c{};
  jpeg_error_mgr err{};
  c.err = jpeg_std_error(&err);
  jpeg_create_compress(&c);
  FILE* f = std::fopen(path.string().c_str(), "wb");
  ASSERT_NE(f, nullptr);
  jpeg_stdio_dest(&c, f);
  c.image_width = static_cast<JDIMENSION>(w);
  c.image_height = static_cast<JDIMENSION>(h);
  c.input_components = 1;
  c.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&c);
  jpeg_set_quality(&c, 95, TRUE);
  jpeg_start_compress(&c, TRUE);
  std::vector<std::uint8_t> row(w, value);
  while (c.next_scanline < c.image_height) {
    JSAMPROW r = row.data();
    jpeg_write_scanlines(&c, &r, 1);
  }
  jpeg_finish_compress(&c);
  jpeg_destroy_compress(&c);
  std::fclose(f);
}

}  // namespace

TEST(Manifest, CsvRoundTripWithQuoting) {
  const fs::path dir = scratch("roundtrip");
  Manifest m;
  m.entries.push_back({"a", "a_test.png", "a_temp.png", Label::defective, "train"});
  m.entries.push_back({"b,\"odd\"", "sub dir/b_test.png", "b_temp.png", Label::intact, ""});
  m.entries.push_back({"c", "c_test.png", "c_temp.png", Label::unknown, "test"});
  write_manifest(dir / "m.csv", m);
  const Manifest back = read_manifest(dir / "m.csv", false);
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.base_dir, dir);
  EXPECT_EQ(manifest_to_csv(back), manifest_to_csv(m));
}

TEST(Manifest, RejectsMalformedInput) {
  const fs::path dir = scratch("malformed");
  auto error_for = [&](const std::string& text) -> std::string {
    write_text(dir / "m.csv", text);
    try {
      read_manifest(dir / "m.csv", false);
    } catch (const DatasetError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(error_for("id,path\n").find("header"), std::string::npos);
  EXPECT_NE(error_for("").find("empty"), std::string::npos);
  EXPECT_NE(error_for("id,defective,template,label,split\na,x,y\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_for("id,defective,template,label,split\na,x,y,,\na,x,y,,\n").find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_for("id,defective,template,label,split\na,x,y,broken,\n").find("label"), std::string::npos);
  EXPECT_NE(error_for("id,defective,template,label,split\n,x,y,,\n").find("required"), std::string::npos);
  EXPECT_THROW(read_manifest(dir / "absent.csv"), DatasetError);
}

TEST(Manifest, CheckFilesReportsMissingImage) {
  const fs::path dir = scratch("missing");
  save_gray_png(dir / "a_test.png", gradient_image(8, 8));
  write_text(dir / "m.csv", "id,defective,template,label,split\na,a_test.png,a_temp.png,,\n");
  try {
    read_manifest(dir / "m.csv");
    FAIL() << "expected an error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("a_temp.png"), std::string::npos);
  }
}

TEST(Manifest, RebaseKeepsFilesReachable) {
  const fs::path dir = scratch("rebase");
  fs::create_directories(dir / "data" / "x");
  fs::create_directories(dir / "out");
  save_gray_png(dir / "data" / "x" / "p_test.png", gradient_image(8, 8));
  save_gray_png(dir / "data" / "x" / "p_temp.png", gradient_image(8, 8));
  Manifest m;
  m.base_dir = dir / "data";
  m.entries.push_back({"p", "x/p_test.png", "x/p_temp.png", Label::unknown, ""});
  const Manifest r = rebase_manifest(m, dir / "out");
  EXPECT_EQ(r.entries[0].defective, fs::path("../data/x/p_test.png"));
  write_manifest(dir / "out" / "m.csv", r);
  EXPECT_NO_THROW(read_manifest(dir / "out" / "m.csv"));
}

TEST(SaltPepper, ExactCountBinaryValuesRestUntouched) {
  const Tensor img = gradient_image(32, 40);
  for (double density : {0.0, 0.05, 0.3, 1.0}) {
    const Tensor noisy = add_salt_pepper(img, density, 42);
    std::size_t changed_positions = 0;
    std::size_t ones = 0, zeros = 0;
    // Compare against a second draw with a marker image to find the chosen set.
    Tensor marker(img.shape());
    for (float& v : marker.values()) v = 0.5f;
    const Tensor marked = add_salt_pepper(marker, density, 42);
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (marked[i] != 0.5f) {
        ++changed_positions;
        EXPECT_TRUE(noisy[i] == 0.0f || noisy[i] == 1.0f);
        EXPECT_EQ(noisy[i], marked[i]);
        (noisy[i] == 1.0f ? ones : zeros)++;
      } else {
        EXPECT_EQ(noisy[i], img[i]) << i;
      }
    }
    EXPECT_EQ(changed_positions, static_cast<std::size_t>(std::llround(density * img.size()))) << density;
    if (density >= 0.3) {
      EXPECT_GT(ones, changed_positions / 3);
      EXPECT_GT(zeros, changed_positions / 3);
    }
  }
}

TEST(SaltPepper, DeterministicPerSeedAndValidatesDensity) {
  const Tensor img = gradient_image(16, 16);
  EXPECT_EQ(add_salt_pepper(img, 0.1, 5), add_salt_pepper(img, 0.1, 5));
  EXPECT_NE(add_salt_pepper(img, 0.1, 5), add_salt_pepper(img, 0.1, 6));
  EXPECT_THROW(add_salt_pepper(img, -0.1, 1), DatasetError);
  EXPECT_THROW(add_salt_pepper(img, 1.5, 1), DatasetError);
}

TEST(Split, PartitionsWithRequestedSizes) {
  Manifest m;
  for (int i = 0; i < 200; ++i) m.entries.push_back({"e" + std::to_string(i), "d", "t", Label::unknown, ""});
  const Manifest s = split_manifest(m, {}, 3);
  std::size_t train = 0, val = 0, test = 0;
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    EXPECT_EQ(s.entries[i].id, m.entries[i].id);
    const auto& tag = s.entries[i].split;
    train += tag == "train";
    val += tag == "val";
    test += tag == "test";
  }
  EXPECT_EQ(train, 160u);
  EXPECT_EQ(val, 20u);
  EXPECT_EQ(test, 20u);
  EXPECT_EQ(s.split("train").size() + s.split("val").size() + s.split("test").size(), 200u);
  EXPECT_EQ(manifest_to_csv(s), manifest_to_csv(split_manifest(m, {}, 3)));
  EXPECT_NE(manifest_to_csv(s), manifest_to_csv(split_manifest(m, {}, 4)));
  EXPECT_THROW(split_manifest(m, {0.5, 0.5, 0.5}, 1), DatasetError);
  EXPECT_THROW(split_manifest(Manifest{}, {}, 1), DatasetError);
}

TEST(DefectSpecParse, AcceptsKnownFormsOnly) {
  EXPECT_EQ(DefectSpec::parse("none").mode, DefectSpec::Mode::none);
  EXPECT_EQ(DefectSpec::parse("random").mode, DefectSpec::Mode::random);
  const DefectSpec s = DefectSpec::parse("random:2-4:5-9");
  EXPECT_EQ(s.min_count, 2u);
  EXPECT_EQ(s.max_count, 4u);
  EXPECT_EQ(s.min_size, 5u);
  EXPECT_EQ(s.max_size, 9u);
  EXPECT_THROW(DefectSpec::parse("random:4-2:5-9"), DatasetError);
  EXPECT_THROW(DefectSpec::parse("random:1-2:5-9x"), DatasetError);
  EXPECT_THROW(DefectSpec::parse("lots"), DatasetError);
}

TEST(Synthetic, MaskIsExactDifferenceAndBoardsAreBinary) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticPair p = make_synthetic_pair(64, DefectSpec::random(), seed);
    std::size_t copper = 0;
    for (std::size_t i = 0; i < p.templ.size(); ++i) {
      ASSERT_TRUE(p.templ[i] == 0.0f || p.templ[i] == 1.0f);
      ASSERT_TRUE(p.defective[i] == 0.0f || p.defective[i] == 1.0f);
      ASSERT_EQ(p.mask[i], p.templ[i] != p.defective[i] ? 1.0f : 0.0f);
      copper += p.templ[i] == 1.0f;
    }
    EXPECT_GT(copper, 0u);
    EXPECT_LT(copper, p.templ.size());
    EXPECT_FALSE(p.defects.empty()) << seed;
    EXPECT_NE(p.defective, p.templ) << seed;
  }
}

TEST(Synthetic, ExplicitPlacementAndNone) {
  const Tensor templ = make_synthetic_template(32, 1);
  const SyntheticPair flip = inject_defects(templ, DefectSpec::single({DefectKind::flip, 4, 5, 3, 2}), 0);
  std::size_t changed = 0;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const bool inside = x >= 4 && x < 7 && y >= 5 && y < 7;
      EXPECT_EQ(flip.mask[y * 32 + x], inside ? 1.0f : 0.0f);
      changed += inside;
    }
  EXPECT_EQ(changed, 6u);
  const SyntheticPair none = inject_defects(templ, DefectSpec::none(), 0);
  EXPECT_EQ(none.defective, templ);
  EXPECT_TRUE(none.defects.empty());
}

TEST(Synthetic, DatasetFilesAndLabels) {
  const fs::path dir = scratch("synthetic");
  const Manifest m = make_synthetic_dataset(6, 32, DefectSpec::random(), 9, dir);
  ASSERT_EQ(m.entries.size(), 6u);
  write_manifest(dir / "manifest.csv", m);
  const Manifest back = read_manifest(dir / "manifest.csv");
  for (const auto& e : back.entries) {
    EXPECT_EQ(e.label, Label::defective);
    const ImagePair p = load_pair(back, e, 32, 32);
    const Tensor mask = load_image(back.resolve(mask_path_for(e.defective)), 32);
    EXPECT_EQ(mask, difference_mask(p.defective, p.templ)) << e.id;
  }
  const Manifest clean = make_synthetic_dataset(2, 32, DefectSpec::none(), 9, scratch("synthetic_none"));
  for (const auto& e : clean.entries) EXPECT_EQ(e.label, Label::intact);
  // Same seed, same pixels.
  const Manifest again = make_synthetic_dataset(6, 32, DefectSpec::random(), 9, scratch("synthetic_again"));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(load_image(m.resolve(m.entries[i].defective), 32),
              load_image(again.resolve(again.entries[i].defective), 32));
  }
}

TEST(ScanDeepPcb, PairsTestAndTemplateFiles) {
  const fs::path dir = scratch("deeppcb");
  fs::create_directories(dir / "group1" / "g1");
  fs::create_directories(dir / "group2");
  const Tensor img = gradient_image(16, 16);
  save_gray_png(dir / "group1" / "g1" / "001_test.png", img);
  save_gray_png(dir / "group1" / "g1" / "001_temp.png", img);
  save_gray_png(dir / "group2" / "7_test.png", img);
  save_gray_png(dir / "group2" / "7_temp.png", img);
  save_gray_png(dir / "group2" / "8_test.png", img);  // no template: skipped
  write_text(dir / "group2" / "notes.txt", "x");
  const Manifest m = scan_deeppcb(dir);
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].id, "group1/g1/001");
  EXPECT_EQ(m.entries[0].templ, fs::path("group1/g1/001_temp.png"));
  EXPECT_EQ(m.entries[1].id, "group2/7");
  EXPECT_EQ(m.entries[1].label, Label::defective);
  EXPECT_THROW(scan_deeppcb(dir / "nope"), DatasetError);
}

TEST(ImageIo, DecodesPngPgmAndJpeg) {
  const fs::path dir = scratch("images");
  const Tensor img = gradient_image(12, 20);
  save_gray_png(dir / "a.png", img);
  write_pgm(dir / "a.pgm", gray_to_raster(img));
  EXPECT_EQ(load_image(dir / "a.png", 12, 20), img);
  EXPECT_EQ(load_image(dir / "a.pgm", 12, 20), img);
  write_gray_jpeg(dir / "a.jpg", 16, 8, 200);
  const Tensor j = load_image(dir / "a.jpg", 8, 16);
  for (float v : j.values()) EXPECT_NEAR(v, 200.0f / 255.0f, 2.0f / 255.0f);
  write_text(dir / "bad.png", "\x89PNG garbage");
  EXPECT_THROW(load_image(dir / "bad.png", 8), ImageError);
  write_text(dir / "text.png", "hello");
  EXPECT_THROW(load_image(dir / "text.png", 8), ImageError);
}

TEST(ImageIo, RgbUsesLuminanceWeights) {
  const fs::path dir = scratch("rgb");
  Raster8 r(2, 1, 3);
  r.pixels = {255, 0, 0, 0, 0, 255};
  write_png(dir / "rgb.png", r);
  const Tensor t = load_image(dir / "rgb.png", 1, 2);
  EXPECT_NEAR(t[0], 0.299f, 1e-6f);
  EXPECT_NEAR(t[1], 0.114f, 1e-6f);
}

TEST(ImageIo, BilinearResize) {
  Tensor t({1, 2, 2});
  t[0] = 0.0f;
  t[1] = 1.0f;
  t[2] = 1.0f;
  t[3] = 0.0f;
  const Tensor up = resize_bilinear(t, 4, 4);
  // Corners replicate the source, the centre is the mean.
  EXPECT_FLOAT_EQ(up[0], 0.0f);
  EXPECT_FLOAT_EQ(up[3], 1.0f);
  EXPECT_FLOAT_EQ(up[1 * 4 + 1], 0.375f);
  EXPECT_FLOAT_EQ(up[1 * 4 + 2], 0.625f);
  Tensor flat({1, 6, 6});
  for (float& v : flat.values()) v = 0.25f;
  const Tensor down = resize_bilinear(flat, 3, 3);
  for (float v : down.values()) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_EQ(resize_bilinear(up, 4, 4), up);
}

TEST(Synthetic, SmallestBoardsAlwaysReceiveADefect) {
  const DefectSpec spec = DefectSpec::parse("random");
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const SyntheticPair p = make_synthetic_pair(16, spec, seed);
    EXPECT_FALSE(p.defects.empty()) << seed;
  }
}
