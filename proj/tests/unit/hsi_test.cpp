#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "sfa/hsi/annotations.hpp"
#include "sfa/hsi/band_match.hpp"
#include "sfa/hsi/cube.hpp"
#include "sfa/hsi/label_guard.hpp"
#include "sfa/hsi/synth.hpp"
#include "sfa/hsi/synth_config.hpp"

namespace fs = std::filesystem;
using namespace sfa::hsi;
using sfa::Box;

namespace {

HyperCube iota_cube(std::uint32_t w, std::uint32_t h, std::uint32_t l) {
    HyperCube c = HyperCube::zeros(w, h, l, 4.5f);
    std::iota(c.values.begin(), c.values.end(), 0.0f);
    return c;
}

// Cube whose band b is filled with the value b + 1, so band identity is visible.
HyperCube band_tagged(std::uint32_t bands) {
    HyperCube c = HyperCube::zeros(3, 2, bands);
    for (std::uint32_t b = 0; b < bands; ++b) {
        for (std::size_t p = 0; p < c.plane_size(); ++p) {
            c.values[b * c.plane_size() + p] = static_cast<float>(b + 1);
        }
    }
    return c;
}

std::vector<float> band_tags(const HyperCube& c) {
    std::vector<float> tags;
    for (std::uint32_t b = 0; b < c.bands; ++b) {
        tags.push_back(c.band(b)[0]);
    }
    return tags;
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("sfa_hsi_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(CubeIo, RoundTripIsBitExact) {
    const auto dir = scratch("roundtrip");
    const HyperCube cube = iota_cube(2, 2, 3);
    write_cube(cube, dir / "a.hsic");
    EXPECT_EQ(read_cube(dir / "a.hsic"), cube);
}

TEST(CubeIo, HeaderLayoutIsLittleEndian) {
    HyperCube cube = iota_cube(2, 3, 5);
    cube.spectral_resolution = 2.5f;
    const auto bytes = encode_cube(cube);
    ASSERT_EQ(bytes.size(), kCubeHeaderBytes + 2 * 3 * 5 * 4);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "HSIC");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(bytes[6], 2);   // W
    EXPECT_EQ(bytes[10], 3);  // H
    EXPECT_EQ(bytes[14], 5);  // L
    // 2.5f = 0x40200000
    EXPECT_EQ(bytes[18], 0x00);
    EXPECT_EQ(bytes[20], 0x20);
    EXPECT_EQ(bytes[21], 0x40);
    // Second payload value is 1.0f = 0x3f800000
    EXPECT_EQ(bytes[kCubeHeaderBytes + 7], 0x3f);
}

TEST(CubeIo, WrongMagicIsFormatError) {
    auto bytes = encode_cube(iota_cube(2, 2, 3));
    bytes[0] = 'X';
    EXPECT_THROW(decode_cube(bytes), CubeFormatError);
}

TEST(CubeIo, WrongVersionIsFormatError) {
    auto bytes = encode_cube(iota_cube(2, 2, 3));
    bytes[4] = 9;
    EXPECT_THROW(decode_cube(bytes), CubeFormatError);
}

TEST(CubeIo, ShortPayloadIsTruncationError) {
    auto bytes = encode_cube(iota_cube(2, 2, 3));
    bytes.resize(bytes.size() - 1);
    EXPECT_THROW(decode_cube(bytes), CubeTruncatedError);
    bytes.resize(10);
    EXPECT_THROW(decode_cube(bytes), CubeTruncatedError);
}

TEST(CubeIo, NonFiniteValuesAreRejected) {
    HyperCube cube = iota_cube(2, 2, 1);
    auto bytes = encode_cube(cube);
    cube.values[2] = std::numeric_limits<float>::infinity();
    EXPECT_THROW(encode_cube(cube), CubeValueError);
    // NaN = 0x7fc00000 patched into the first payload value.
    bytes[kCubeHeaderBytes + 2] = 0xc0;
    bytes[kCubeHeaderBytes + 3] = 0x7f;
    EXPECT_THROW(decode_cube(bytes), CubeValueError);
}

TEST(CubeIo, DistinctErrorTypes) {
    // Catching by the base class must not blur the three failure kinds together.
    EXPECT_FALSE((std::is_base_of_v<CubeFormatError, CubeTruncatedError>));
    EXPECT_FALSE((std::is_base_of_v<CubeTruncatedError, CubeValueError>));
    EXPECT_THROW(read_cube("/nonexistent/x.hsic"), CubeError);
}

TEST(BandMatch, ExpansionReplicatesEdgeBands) {
    const auto out = match_bands(band_tagged(4), 8);
    EXPECT_EQ(band_tags(out), (std::vector<float>{1, 1, 1, 2, 3, 4, 4, 4}));
    EXPECT_EQ(out.bands, 8u);
}

TEST(BandMatch, DownsampleSelectsRoundedIndices) {
    EXPECT_EQ(band_match_indices(5, 3), (std::vector<std::uint32_t>{0, 2, 4}));
    EXPECT_EQ(band_tags(match_bands(band_tagged(5), 3)), (std::vector<float>{1, 3, 5}));
    EXPECT_EQ(band_match_indices(7, 1), (std::vector<std::uint32_t>{0}));
}

TEST(BandMatch, EqualCountIsIdentity) {
    const HyperCube c = iota_cube(3, 2, 6);
    EXPECT_EQ(match_bands(c, 6), c);
}

TEST(BandMatch, OddDeficitPutsExtraBandAtBack) {
    EXPECT_EQ(band_tags(match_bands(band_tagged(3), 6)), (std::vector<float>{1, 1, 2, 3, 3, 3}));
}

TEST(BandMatch, ZeroTargetRejected) { EXPECT_THROW(match_bands(band_tagged(3), 0), std::invalid_argument); }

TEST(BandMatchProperty, RandomCases) {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<std::uint32_t> count(1, 80);
    for (int trial = 0; trial < 200; ++trial) {
        const std::uint32_t l = count(rng);
        const std::uint32_t t = count(rng);
        const HyperCube c = band_tagged(l);
        const HyperCube m = match_bands(c, t);
        ASSERT_EQ(m.bands, t);
        EXPECT_EQ(match_bands(m, t), m) << "fixed point, L=" << l << " t=" << t;
        const auto tags = band_tags(m);
        if (l < t) {
            const std::size_t front = (t - l) / 2;
            for (std::size_t i = 0; i < t; ++i) {
                const float expect = i < front ? 1.0f : i >= front + l ? static_cast<float>(l) : static_cast<float>(i - front + 1);
                EXPECT_EQ(tags[i], expect) << "L=" << l << " t=" << t << " i=" << i;
            }
        } else if (l > t) {
            for (std::uint32_t i = 0; i < t; ++i) {
                const double src = t == 1 ? 0.0 : std::round(static_cast<double>(i) * (l - 1) / (t - 1));
                EXPECT_EQ(tags[i], static_cast<float>(src + 1));
                // No interpolation: payload planes are copied verbatim.
                const auto plane = m.band(i);
                const auto orig = c.band(static_cast<std::uint32_t>(src));
                EXPECT_TRUE(std::equal(plane.begin(), plane.end(), orig.begin()));
            }
        } else {
            EXPECT_EQ(m, c);
        }
    }
}

TEST(Annotations, RoundTripTwoBoxes) {
    AnnotationFile file;
    file.categories = {{1, "ship"}};
    file.images.push_back({7, "cubes/a.hsic", 64, 48, 30, {{1.5f, 2, 10, 12}, {30, 20, 8.25f, 4}}, {1, 1}});
    const auto back = parse_annotations(dump_annotations(file));
    EXPECT_EQ(back, file);
    const auto dir = scratch("ann");
    save_annotations(file, dir / "a.json");
    EXPECT_EQ(load_annotations(dir / "a.json"), file);
}

TEST(Annotations, BoxBeyondWidthIsBoundsError) {
    AnnotationFile file;
    file.images.push_back({0, "a.hsic", 16, 16, 3, {{10, 0, 7, 4}}, {1}});
    EXPECT_THROW(parse_annotations(dump_annotations(file)), AnnotationBoundsError);
}

TEST(Annotations, MalformedJsonIsFormatError) {
    EXPECT_THROW(parse_annotations("{\"images\": [}"), AnnotationFormatError);
    EXPECT_THROW(parse_annotations("{\"images\": []}"), AnnotationFormatError);
    EXPECT_THROW(parse_annotations(R"({"images":[],"annotations":[{"image_id":3,"bbox":[0,0,1,1],"category_id":1}],"categories":[]})"),
                 AnnotationFormatError);
}

TEST(Annotations, EmptyAnnotationListIsValid) {
    const auto file =
        parse_annotations(R"({"images":[{"id":0,"file":"a.hsic","width":8,"height":8,"bands":2}],"annotations":[],"categories":[]})");
    ASSERT_EQ(file.images.size(), 1u);
    EXPECT_TRUE(file.images[0].boxes.empty());
}

TEST(Annotations, SampleRejectsMismatchedLabels) {
    EXPECT_THROW(AnnotatedSample("x", HyperCube::zeros(8, 8, 1), {{0, 0, 2, 2}}, {}), AnnotationFormatError);
    EXPECT_THROW(AnnotatedSample("x", HyperCube::zeros(8, 8, 1), {{0, 0, 0, 2}}, {1}), AnnotationBoundsError);
}

TEST(LabelFirewall, HeldOutLabelsThrowDuringTraining) {
    AnnotatedSample held("t0", HyperCube::zeros(8, 8, 1), {{0, 0, 2, 2}}, {1}, true);
    AnnotatedSample open("s0", HyperCube::zeros(8, 8, 1), {{0, 0, 2, 2}}, {1}, false);
    int trips = 0;
    set_held_out_tripwire([&](const std::string&) { ++trips; });
    EXPECT_EQ(held.boxes().size(), 1u);  // outside training: allowed but observed
    EXPECT_EQ(trips, 1);
    {
        TrainingLabelFirewall firewall;
        EXPECT_THROW(held.boxes(), HeldOutLabelAccess);
        EXPECT_THROW(held.classes(), HeldOutLabelAccess);
        EXPECT_NO_THROW(open.boxes());
        EXPECT_NO_THROW(held.cube());
    }
    EXPECT_EQ(trips, 3);
    set_held_out_tripwire({});
}

TEST(Synth, SameSeedSameData) {
    auto cfg = reference_synth_config();
    cfg.source.count = 4;
    cfg.target.count = 4;
    const auto a = generate_domain_pair(cfg);
    const auto b = generate_domain_pair(cfg);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a.source[i].cube(), b.source[i].cube());
        EXPECT_EQ(a.source[i].boxes(), b.source[i].boxes());
        EXPECT_EQ(a.target[i].cube(), b.target[i].cube());
    }
    cfg.seed += 1;
    const auto c = generate_domain_pair(cfg);
    EXPECT_NE(a.source[0].cube(), c.source[0].cube());
}

TEST(Synth, BandCountsFollowConfig) {
    auto cfg = reference_synth_config();
    cfg.source.count = 3;
    cfg.target.count = 3;
    const auto pair = generate_domain_pair(cfg);
    for (const auto& s : pair.source) {
        EXPECT_EQ(s.cube().bands, 30u);
        EXPECT_FALSE(s.held_out());
    }
    for (const auto& t : pair.target) {
        EXPECT_EQ(t.cube().bands, 60u);
        EXPECT_TRUE(t.held_out());
    }
}

TEST(Synth, ObjectsDifferFromSurroundingsBySpectralAngle) {
    auto cfg = reference_synth_config();
    cfg.source.count = 6;
    cfg.target.count = 6;
    const auto pair = generate_domain_pair(cfg);
    int measured = 0;
    for (const auto* domain : {&pair.source, &pair.target}) {
        for (const auto& s : *domain) {
            const auto& cube = s.cube();
            for (const Box& b : s.boxes()) {
                // Mean spectrum over the central pixel patch vs. a one-pixel ring just outside the box.
                std::vector<float> inside(cube.bands, 0.0f), ring(cube.bands, 0.0f);
                const int cx = static_cast<int>(b.x + b.w / 2), cy = static_cast<int>(b.y + b.h / 2);
                int n_in = 0, n_ring = 0;
                for (int y = cy - 1; y <= cy; ++y) {
                    for (int x = cx - 1; x <= cx; ++x) {
                        for (std::uint32_t l = 0; l < cube.bands; ++l) inside[l] += cube.at(l, y, x);
                        ++n_in;
                    }
                }
                for (int y = static_cast<int>(b.y) - 1; y <= static_cast<int>(b.y2()); ++y) {
                    for (int x = static_cast<int>(b.x) - 1; x <= static_cast<int>(b.x2()); ++x) {
                        const bool edge = y == static_cast<int>(b.y) - 1 || y == static_cast<int>(b.y2()) ||
                                          x == static_cast<int>(b.x) - 1 || x == static_cast<int>(b.x2());
                        if (!edge || x < 0 || y < 0 || x >= 64 || y >= 64) continue;
                        for (std::uint32_t l = 0; l < cube.bands; ++l) ring[l] += cube.at(l, y, x);
                        ++n_ring;
                    }
                }
                if (n_ring == 0) continue;
                EXPECT_GE(spectral_angle(inside, ring), cfg.angle_margin);
                ++measured;
            }
        }
    }
    EXPECT_GT(measured, 10);
}

TEST(Synth, SizeDistributionCoversSmallAndMedium) {
    auto cfg = reference_synth_config();
    const auto pair = generate_domain_pair(cfg);
    int small = 0, medium = 0;
    for (const auto& s : pair.source) {
        for (const Box& b : s.boxes()) {
            (b.area() < 1024 ? small : medium)++;
        }
    }
    for (const auto& s : pair.target) {
        for (const Box& b : s.boxes()) {
            (b.area() < 1024 ? small : medium)++;
        }
    }
    EXPECT_GT(small, 0);
    EXPECT_GT(medium, 0);
}

TEST(Synth, DegenerateConfigsAreRejected) {
    auto cfg = reference_synth_config();
    cfg.min_objects = 0;
    EXPECT_THROW(generate_domain_pair(cfg), SynthConfigError);
    cfg = reference_synth_config();
    cfg.materials.clear();
    EXPECT_THROW(generate_domain_pair(cfg), SynthConfigError);
    cfg = reference_synth_config();
    cfg.min_size = 100;
    cfg.max_size = 120;
    EXPECT_THROW(generate_domain_pair(cfg), SynthConfigError);
    cfg = reference_synth_config();
    cfg.angle_margin = 3.0f;
    EXPECT_THROW(generate_domain_pair(cfg), SynthConfigError);
}

TEST(Dataset, SaveAndLoad) {
    auto cfg = reference_synth_config();
    cfg.source.count = 2;
    cfg.target.count = 2;
    const auto pair = generate_domain_pair(cfg);
    const auto dir = scratch("dataset");
    save_dataset(pair.target, cfg.categories, dir / "target");
    const auto back = load_dataset(dir / "target");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_TRUE(back[1].held_out());
    EXPECT_EQ(back[1].cube(), pair.target[1].cube());
    EXPECT_EQ(back[1].boxes(), pair.target[1].boxes());
}

TEST(SynthConfigText, DumpParseRoundTrip) {
    auto cfg = reference_synth_config();
    cfg.seed = 99;
    cfg.target.noise_sigma = 0.125f;
    cfg.source.background_gain = 1.5f;
    const auto back = parse_synth_config(dump_synth_config(cfg));
    EXPECT_EQ(dump_synth_config(back), dump_synth_config(cfg));
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.materials.size(), cfg.materials.size());
}

TEST(SynthConfigText, RejectsUnknownRepeatedAndInvalid) {
    EXPECT_THROW(parse_synth_config("colour=red\n"), SynthConfigError);
    EXPECT_THROW(parse_synth_config("seed=1\nseed=2\n"), SynthConfigError);
    EXPECT_THROW(parse_synth_config("image_size=big\n"), SynthConfigError);
    EXPECT_THROW(parse_synth_config("target_background_gain=0\n"), SynthConfigError);
    EXPECT_THROW(parse_synth_config("min_size=30\nmax_size=10\n"), SynthConfigError);
}

TEST(SynthConfigText, ShippedReferenceMatchesBuiltIn) {
    const auto cfg = load_synth_config(std::filesystem::path(SFA_CONFIG_DIR) / "reference_synth.cfg");
    EXPECT_EQ(dump_synth_config(cfg), dump_synth_config(reference_synth_config()));
}
