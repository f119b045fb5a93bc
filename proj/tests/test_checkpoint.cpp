#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "omoe/checkpoint.hpp"
#include "omoe/rng.hpp"

using omoe::Matrix;

namespace {

std::string temp_path(const char* tag) {
    return std::string("/tmp/omoe_ckpt_test_") + tag + ".omoe";
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

omoe::ParamStore sample_store() {
    omoe::Rng rng(31337);
    omoe::ParamStore s;
    s.set("alpha.weight", rng.gaussian_matrix(5, 7));
    s.set("alpha.bias", rng.gaussian_matrix(1, 7));
    s.set("beta.sigma", rng.gaussian_matrix(1, 3));
    s.set("gamma", Matrix(2, 2, -0.0));
    return s;
}

}  // namespace

TEST_CASE("save, load, save produces identical bytes") {
    const auto p1 = temp_path("a"), p2 = temp_path("b");
    auto store = sample_store();
    omoe::save_checkpoint(p1, store);
    auto loaded = omoe::load_checkpoint(p1);
    omoe::save_checkpoint(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));

    // entries survive bit-exactly, in order
    REQUIRE(loaded.size() == store.size());
    for (std::size_t i = 0; i < store.items().size(); ++i) {
        CHECK(loaded.items()[i].first == store.items()[i].first);
        CHECK(omoe::fnv1a_checksum(loaded.items()[i].second) ==
              omoe::fnv1a_checksum(store.items()[i].second));
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("truncated files are rejected") {
    const auto p = temp_path("trunc");
    omoe::save_checkpoint(p, sample_store());
    auto bytes = slurp(p);
    for (std::size_t keep : {bytes.size() - 9, bytes.size() / 2, std::size_t{10}, std::size_t{3}}) {
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(keep));
        os.close();
        CHECK_THROWS_AS(omoe::load_checkpoint(p), omoe::CorruptCheckpoint);
    }
    std::remove(p.c_str());
}

TEST_CASE("bad magic and bad version are rejected") {
    const auto p = temp_path("magic");
    omoe::save_checkpoint(p, sample_store());
    auto bytes = slurp(p);

    auto rewrite = [&](std::size_t at, char v) {
        auto copy = bytes;
        copy[at] = v;
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        os.write(copy.data(), static_cast<std::streamsize>(copy.size()));
    };
    rewrite(0, 'X');
    CHECK_THROWS_AS(omoe::load_checkpoint(p), omoe::CorruptCheckpoint);
    rewrite(4, 9);  // version byte
    CHECK_THROWS_AS(omoe::load_checkpoint(p), omoe::CorruptCheckpoint);
    std::remove(p.c_str());
}

TEST_CASE("missing file and missing tensors") {
    CHECK_THROWS_AS(omoe::load_checkpoint("/tmp/omoe_no_such_file.omoe"),
                    omoe::CorruptCheckpoint);
    auto store = sample_store();
    CHECK_NOTHROW(omoe::require_tensors(store, {"alpha.weight", "gamma"}));
    CHECK_THROWS_AS(omoe::require_tensors(store, {"alpha.weight", "delta"}),
                    omoe::IncompleteCheckpoint);
}

TEST_CASE("checksums survive the round trip") {
    const auto p = temp_path("ck");
    auto store = sample_store();
    const auto before = store.checksums();
    omoe::save_checkpoint(p, store);
    const auto after = omoe::load_checkpoint(p).checksums();
    CHECK(before == after);
    std::remove(p.c_str());
}
