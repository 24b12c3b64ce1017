#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "twinbeam/errors.hpp"
#include "twinbeam/intensity.hpp"
#include "twinbeam/joint_pnd.hpp"
#include "twinbeam/serialization.hpp"

using namespace twinbeam;

namespace {

JointPnd random_joint(unsigned seed, std::size_t ns, std::size_t ni) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<double> probs((ns + 1) * (ni + 1));
    double total = 0.0;
    for (double& p : probs)
        total += (p = u(rng));
    for (double& p : probs)
        p /= total;
    return JointPnd(std::move(probs), ns, ni, 0.0);
}

// hand-built envelope for malformed-payload probes
std::string envelope(const std::string& kind, const std::string& payload) {
    return R"({"kind":")" + kind + R"(","version":1,"payload":)" + payload + "}";
}

const char* kValidJointPayload =
    R"({"n_max_s":0,"n_max_i":0,"tail_mass":0.0,"probs":[1.0]})";

} // namespace

TEST_CASE("joint distribution round trip is bit-faithful") {
    const JointPnd original = random_joint(31, 7, 4);
    const std::string text = to_json(original);
    const JointPnd back = joint_pnd_from_json(text);
    REQUIRE(back.n_max_s() == 7);
    REQUIRE(back.n_max_i() == 4);
    CHECK(back.tail_mass() == original.tail_mass());
    for (std::size_t n_s = 0; n_s <= 7; ++n_s)
        for (std::size_t n_i = 0; n_i <= 4; ++n_i)
            CHECK(back(n_s, n_i) == original(n_s, n_i));
    // a second dump of the parsed object reproduces the text verbatim
    CHECK(to_json(back) == text);

    const JointPnd g2 = make_gaussian_pairs(2.0);
    const JointPnd g2_back = joint_pnd_from_json(to_json(g2));
    for (std::size_t n = 0; n <= g2.n_max_s(); ++n)
        CHECK(g2_back(n, n) == g2(n, n));
    CHECK(g2_back.tail_mass() == g2.tail_mass());
}

TEST_CASE("coincidence histogram round trip") {
    CoincidenceDistribution f;
    f.c_max_s = 2;
    f.c_max_i = 1;
    f.origin = CoincidenceDistribution::Origin::monte_carlo;
    f.shots = 1000000;
    f.freqs = {312501.0, 187499.0, 250000.0, 125000.0, 100000.0, 25000.0};
    const CoincidenceDistribution back = coincidence_from_json(to_json(f));
    CHECK(back.c_max_s == 2);
    CHECK(back.c_max_i == 1);
    CHECK(back.origin == CoincidenceDistribution::Origin::monte_carlo);
    REQUIRE(back.shots.has_value());
    CHECK(*back.shots == 1000000);
    CHECK(back.freqs == f.freqs);

    CoincidenceDistribution analytic;
    analytic.c_max_s = 0;
    analytic.c_max_i = 0;
    analytic.origin = CoincidenceDistribution::Origin::analytic;
    analytic.freqs = {0.30000000000000004}; // sub-unit mass, no shot count
    const CoincidenceDistribution aback = coincidence_from_json(to_json(analytic));
    CHECK(!aback.shots.has_value());
    CHECK(aback.freqs[0] == 0.30000000000000004);
    CHECK(aback.origin == CoincidenceDistribution::Origin::analytic);
}

TEST_CASE("reconstruction result round trip") {
    EmResult r{random_joint(8, 3, 3),
               {0.75, 0.25, 0.06250000000000001, 0.0625},
               4,
               true};
    const std::string text = to_json(r);
    const EmResult back = em_result_from_json(text);
    CHECK(back.kl_trace == r.kl_trace);
    CHECK(back.iterations_run == 4);
    CHECK(back.converged);
    for (std::size_t n_s = 0; n_s <= 3; ++n_s)
        for (std::size_t n_i = 0; n_i <= 3; ++n_i)
            CHECK(back.rho(n_s, n_i) == r.rho(n_s, n_i));
    CHECK(to_json(back) == text);
}

TEST_CASE("intensity grid round trip") {
    const IntensityGrid g =
        grid_scan(make_poisson_pairs(2.0), OrderingParam(-0.5), 6.0, 9);
    const std::string text = to_json(g);
    const IntensityGrid back = intensity_grid_from_json(text);
    CHECK(back.s == -0.5);
    CHECK(back.w_s_axis == g.w_s_axis);
    CHECK(back.w_i_axis == g.w_i_axis);
    CHECK(back.values == g.values);
    CHECK(back.cancellation_warnings == g.cancellation_warnings);
    CHECK(to_json(back) == text);

    // the warning counter is optional on ingest
    const IntensityGrid bare = intensity_grid_from_json(envelope(
        "intensity_grid",
        R"({"s":0.0,"w_s_axis":[0.0,1.0],"w_i_axis":[0.0,1.0],"values":[4.0,1.0,1.0,0.25]})"));
    CHECK(bare.cancellation_warnings == 0);
}

TEST_CASE("envelope kind dispatch") {
    CHECK(envelope_kind(to_json(make_poisson_pairs(1.0))) == "joint_pnd");
    CoincidenceDistribution f;
    f.freqs = {1.0};
    CHECK(envelope_kind(to_json(f)) == "coincidence_distribution");
    CHECK(envelope_kind(to_json(EmResult{make_poisson_pairs(0.0), {0.0}, 1, true})) ==
          "em_result");
    CHECK(envelope_kind(to_json(IntensityGrid{})) == "intensity_grid");
    CHECK_THROWS_AS(envelope_kind("not json at all"), io_error);
    CHECK_THROWS_AS(envelope_kind(R"({"version":1})"), validation_error);
    CHECK_THROWS_AS(envelope_kind(R"({"kind":7})"), validation_error);
}

TEST_CASE("envelope rejection: malformed text, wrong kind, wrong version") {
    CHECK_THROWS_AS(joint_pnd_from_json("{truncated"), io_error);
    CHECK_THROWS_AS(joint_pnd_from_json(""), io_error);

    // feeding one stage's artifact to another fails by kind, not by misparse
    const std::string grid_text = to_json(IntensityGrid{});
    CHECK_THROWS_AS(joint_pnd_from_json(grid_text), validation_error);
    CHECK_THROWS_AS(coincidence_from_json(to_json(make_poisson_pairs(1.0))),
                    validation_error);

    CHECK_THROWS_AS(
        joint_pnd_from_json(
            R"({"kind":"joint_pnd","version":2,"payload":)" +
            std::string(kValidJointPayload) + "}"),
        validation_error);
    CHECK_THROWS_AS(
        joint_pnd_from_json(R"({"kind":"joint_pnd","version":1})"),
        validation_error);
    CHECK_THROWS_AS(
        joint_pnd_from_json(R"({"kind":"joint_pnd","version":1,"payload":[]})"),
        validation_error);
    // the happy path for the hand-built envelope, to validate the probes above
    CHECK(joint_pnd_from_json(envelope("joint_pnd", kValidJointPayload))(0, 0) ==
          1.0);
}

TEST_CASE("joint payload validation") {
    CHECK_THROWS_AS(
        joint_pnd_from_json(envelope(
            "joint_pnd",
            R"({"n_max_s":1,"n_max_i":0,"tail_mass":0.0,"probs":[1.0]})")),
        validation_error); // length mismatch
    CHECK_THROWS_AS(
        joint_pnd_from_json(envelope(
            "joint_pnd",
            R"({"n_max_s":0,"n_max_i":0,"tail_mass":0.0,"probs":[null]})")),
        validation_error);
    CHECK_THROWS_AS(
        joint_pnd_from_json(envelope(
            "joint_pnd",
            R"({"n_max_s":0,"n_max_i":0,"tail_mass":0.0,"probs":[0.5]})")),
        validation_error); // mass is not 1
    CHECK_THROWS_AS(
        joint_pnd_from_json(envelope(
            "joint_pnd",
            R"({"n_max_s":-1,"n_max_i":0,"tail_mass":0.0,"probs":[1.0]})")),
        validation_error);
    CHECK_THROWS_AS(
        joint_pnd_from_json(envelope(
            "joint_pnd", R"({"n_max_i":0,"tail_mass":0.0,"probs":[1.0]})")),
        validation_error);
}

TEST_CASE("coincidence payload validation") {
    const auto coin = [](const std::string& payload) {
        return coincidence_from_json(envelope("coincidence_distribution", payload));
    };
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":0,"c_max_i":0,"origin":"analytic","shots":null,"freqs":[-0.1]})"),
        validation_error);
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":0,"c_max_i":0,"origin":"guesswork","shots":null,"freqs":[1.0]})"),
        validation_error);
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":0,"c_max_i":0,"origin":"monte_carlo","shots":null,"freqs":[10.0]})"),
        validation_error); // sampled data must carry its shot count
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":0,"c_max_i":0,"origin":"monte_carlo","shots":0,"freqs":[0.0]})"),
        validation_error);
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":0,"c_max_i":0,"origin":"monte_carlo","shots":5,"freqs":[9.0]})"),
        validation_error); // counts exceed shots
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":0,"c_max_i":0,"origin":"analytic","shots":null,"freqs":[1.5]})"),
        validation_error); // probability mass above 1
    CHECK_THROWS_AS(
        coin(R"({"c_max_s":1,"c_max_i":0,"origin":"analytic","shots":null,"freqs":[1.0]})"),
        validation_error); // freqs shape
    // integer counts with a matching shot total are accepted as-is
    const CoincidenceDistribution ok =
        coin(R"({"c_max_s":1,"c_max_i":0,"origin":"file","shots":10,"freqs":[7,3]})");
    CHECK(ok.freqs == std::vector<double>{7.0, 3.0});
}

TEST_CASE("reconstruction payload validation") {
    const auto em = [](const std::string& payload) {
        return em_result_from_json(envelope("em_result", payload));
    };
    const std::string rho = kValidJointPayload;
    CHECK_THROWS_AS(em(R"({"rho":)" + rho +
                       R"(,"kl_trace":[0.1,0.2],"iterations":2,"converged":true})"),
                    validation_error); // trace must be non-increasing
    CHECK_THROWS_AS(em(R"({"rho":)" + rho +
                       R"(,"kl_trace":[-0.1],"iterations":1,"converged":true})"),
                    validation_error);
    CHECK_THROWS_AS(em(R"({"rho":)" + rho +
                       R"(,"kl_trace":[0.1],"iterations":3,"converged":true})"),
                    validation_error); // count disagrees with trace
    CHECK_THROWS_AS(em(R"({"rho":)" + rho +
                       R"(,"kl_trace":[0.1],"iterations":1,"converged":"yes"})"),
                    validation_error);
    CHECK_THROWS_AS(em(R"({"rho":42,"kl_trace":[0.1],"iterations":1,"converged":true})"),
                    validation_error);
    const EmResult ok = em(R"({"rho":)" + rho +
                           R"(,"kl_trace":[0.5,0.1,0.1],"iterations":3,"converged":false})");
    CHECK(!ok.converged);
    CHECK(ok.kl_trace.size() == 3);
}

TEST_CASE("intensity grid payload validation") {
    const auto grid = [](const std::string& payload) {
        return intensity_grid_from_json(envelope("intensity_grid", payload));
    };
    CHECK_THROWS_AS(
        grid(R"({"s":1.0,"w_s_axis":[0.0],"w_i_axis":[0.0],"values":[4.0]})"),
        validation_error); // ordering parameter out of range
    CHECK_THROWS_AS(
        grid(R"({"s":0.0,"w_s_axis":[0.0,0.0],"w_i_axis":[0.0,1.0],"values":[1,1,1,1]})"),
        validation_error); // axis not strictly increasing
    CHECK_THROWS_AS(
        grid(R"({"s":0.0,"w_s_axis":[1.0,0.5],"w_i_axis":[0.0,1.0],"values":[1,1,1,1]})"),
        validation_error);
    CHECK_THROWS_AS(
        grid(R"({"s":0.0,"w_s_axis":[-1.0,0.5],"w_i_axis":[0.0,1.0],"values":[1,1,1,1]})"),
        validation_error);
    CHECK_THROWS_AS(
        grid(R"({"s":0.0,"w_s_axis":[],"w_i_axis":[0.0],"values":[]})"),
        validation_error);
    CHECK_THROWS_AS(
        grid(R"({"s":0.0,"w_s_axis":[0.0,1.0],"w_i_axis":[0.0,1.0],"values":[1,1,1]})"),
        validation_error); // values shape
}

TEST_CASE("CSV export carries full precision") {
    IntensityGrid g;
    g.w_s_axis = {0.0, 2.5};
    g.w_i_axis = {0.0, 1.0, 3.0};
    g.values = {4.0, 0.5, -0.125, 0.30000000000000004, 1.0, 0.0};
    CHECK(to_csv(g) == ",0,1,3\n"
                       "0,4,0.5,-0.125\n"
                       "2.5,0.30000000000000004,1,0\n");
    CHECK_THROWS_AS(to_csv(IntensityGrid{}), validation_error);
    g.values.pop_back();
    CHECK_THROWS_AS(to_csv(g), validation_error);
}

TEST_CASE("file helpers and an on-disk artifact cycle") {
    const std::string path = "/tmp/twinbeam_serialization_test.json";
    const JointPnd p = random_joint(5150, 5, 6);
    write_text_file(path, to_json(p));
    const JointPnd back = joint_pnd_from_json(read_text_file(path));
    for (std::size_t n_s = 0; n_s <= 5; ++n_s)
        for (std::size_t n_i = 0; n_i <= 6; ++n_i)
            CHECK(back(n_s, n_i) == p(n_s, n_i));
    std::remove(path.c_str());

    CHECK_THROWS_AS(read_text_file("/tmp/twinbeam_no_such_file_7b.json"), io_error);
    CHECK_THROWS_AS(write_text_file("/tmp/no_such_dir_7b/out.json", "x"), io_error);
}
