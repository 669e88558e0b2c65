#include <doctest.h>

#include <algorithm>
#include <vector>

#include "ksve/attack.hpp"
#include "ksve/pack_sim.hpp"

using namespace ksve;

namespace {

TelemetryStream sample_stream() {
  const Pack pack = Pack::build(PackTopology::p5s80(), CellParams{}, Heterogeneity{}, 11);
  Protocol p;
  p.mode = ProtocolMode::charge;
  p.duration_s = 400;
  p.noise_std_v = 0.01;
  p.noise_seed = 3;
  return run_protocol(pack, initial_state(pack, 0.33), p).stream;
}

std::vector<double> sorted(const VectorXd& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TEST_CASE("fdi bias of -3 V") {
  TelemetryFrame f;
  f.t_s = 50;
  f.v_meas = VectorXd(2);
  f.v_meas << 200.0, 201.0;
  const AttackSpec spec{AttackKind::fdi_bias, 40.0, 1e9, -3.0};
  const auto r = inject(f, spec, {});
  CHECK(r.v_corrupted(0) == 197.0);
  CHECK(r.v_corrupted(1) == 198.0);
}

TEST_CASE("data swap reverses ascending order in place") {
  VectorXd v(3);
  v << 3.9, 4.1, 4.0;
  const VectorXd out = reverse_sorted_positions(v);
  CHECK(out(0) == 4.1);
  CHECK(out(1) == 3.9);
  CHECK(out(2) == 4.0);
  VectorXd ties(4);
  ties << 1.0, 2.0, 1.0, 3.0;
  const VectorXd t = reverse_sorted_positions(ties);
  // order by value, stable: 0, 2, 1, 3 -> slots 0, 2, 1, 3 get 3, 2, 1, 1
  CHECK(t(0) == 3.0);
  CHECK(t(2) == 2.0);
  CHECK(t(1) == 1.0);
  CHECK(t(3) == 1.0);
}

TEST_CASE("none is identity") {
  const auto s = sample_stream();
  const auto a = apply_attack(s, AttackSpec{});
  for (std::size_t k = 0; k < s.size(); ++k) CHECK(a.frames[k].v_meas == s.frames[k].v_meas);
}

TEST_CASE("stream-level properties of every attack kind") {
  const auto s = sample_stream();
  const double start = 120, duration = 200;
  for (AttackKind kind : {AttackKind::dos_hold, AttackKind::fdi_bias, AttackKind::data_swap}) {
    const AttackSpec spec{kind, start, duration, -3.0};
    const auto a = apply_attack(s, spec);
    REQUIRE(a.size() == s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto& in = s.frames[k];
      const auto& out = a.frames[k];
      CHECK(out.current_a == in.current_a);
      CHECK(out.soc_true == in.soc_true);
      CHECK(out.v_true == in.v_true);
      const bool attacked = in.t_s >= start && in.t_s < start + duration;
      if (!attacked) {
        CHECK(out.v_meas == in.v_meas);
        continue;
      }
      switch (kind) {
        case AttackKind::dos_hold:
          // bit-equal to the frame just before onset
          CHECK((out.v_meas.array() == s.frames[static_cast<std::size_t>(start) - 1].v_meas.array()).all());
          break;
        case AttackKind::fdi_bias:
          for (Eigen::Index i = 0; i < in.v_meas.size(); ++i) {
            CHECK(out.v_meas(i) == in.v_meas(i) + (-3.0));
          }
          break;
        case AttackKind::data_swap: {
          CHECK(sorted(out.v_meas) == sorted(in.v_meas));
          Eigen::Index lo, hi;
          in.v_meas.minCoeff(&lo);
          in.v_meas.maxCoeff(&hi);
          CHECK(out.v_meas(lo) == in.v_meas(hi));
          CHECK(out.v_meas(hi) == in.v_meas(lo));
          break;
        }
        default:
          break;
      }
    }
  }
}

TEST_CASE("held frame exists exactly while DoS is active") {
  const auto s = sample_stream();
  const AttackSpec spec{AttackKind::dos_hold, 100, 50, 0};
  AttackState st;
  for (const auto& f : s.frames) {
    st = inject(f, spec, st).state;
    CHECK(st.held_frame.has_value() == spec.covers(f.t_s));
    CHECK(st.active == spec.covers(f.t_s));
  }
}

TEST_CASE("attack spec validation and names") {
  CHECK_THROWS(AttackSpec{AttackKind::fdi_bias, -1, 10, 0}.validate());
  CHECK_THROWS(AttackSpec{AttackKind::fdi_bias, 0, 0, 0}.validate());
  CHECK_THROWS(AttackSpec{AttackKind::fdi_bias, 0, 10, std::nan("")}.validate());
  for (auto k : {AttackKind::none, AttackKind::dos_hold, AttackKind::fdi_bias, AttackKind::data_swap}) {
    CHECK(parse_attack_kind(to_string(k)) == k);
  }
  CHECK_THROWS(parse_attack_kind("replay"));
  const AttackSpec w{AttackKind::fdi_bias, 10, 5, -3};
  CHECK(w.covers(10));
  CHECK(w.covers(14.5));
  CHECK_FALSE(w.covers(15));
  CHECK_FALSE(w.covers(9.99));
}
