#include "pch.hpp"

#include <filesystem>

using namespace wiretap;

namespace {

struct Fixture {
  std::shared_ptr<const Encoder> enc;
  CMatrix r;
};

Fixture fixture(std::uint64_t seed = 1) {
  EncoderConfig ec;
  ec.height = ec.width = 4;
  ec.channel_uses = 6;
  ec.seed = seed;
  Fixture f;
  f.enc = std::make_shared<const Encoder>(ec);
  Rng rng(seed);
  Image x(4, 4);
  for (double& v : x.values()) v = rng.uniform();
  const CMatrix g = sample_complex_gaussian(rng, 2, 2, 1.0);
  f.r = g * reshape_codeword(f.enc->encode(x).symbols, 2, 6) + sample_complex_gaussian(rng, 2, 6, 0.1);
  return f;
}

OptimState init_state(std::uint64_t seed) {
  Rng rng(seed);
  return fresh_state(rng, 4, 4, 2, 2, InversionHyper{});
}

}  // namespace

TEST(Stagnation, FlatHistory) { EXPECT_TRUE(is_stagnant({10, 10, 10, 10, 10})); }

TEST(Stagnation, HalvingHistory) {
  std::vector<double> h;
  for (double v = 1024; v >= 1; v /= 2) h.push_back(v);
  EXPECT_FALSE(is_stagnant(h));
}

TEST(Stagnation, PlateauAfterDrop) {
  // Window [5, 5.004, 5.002, 5.001, 5.003]: spread 0.004/5.004 < 1e-3 and
  // the last value is within eps of the best.
  EXPECT_TRUE(is_stagnant({10, 5, 5.004, 5.002, 5.001, 5.003}));
}

TEST(Stagnation, ShortHistoryAndEmpty) {
  EXPECT_FALSE(is_stagnant({10, 10, 10, 10}));
  EXPECT_THROW(is_stagnant({}), InvalidArgument);
}

TEST(Session, CheckpointRollbackRoundTrip) {
  const Fixture f = fixture();
  Session s(0, init_state(2));
  s.burst(UpdateMode::Joint, 10, f.r, *f.enc);
  const OptimState snap = s.state();
  s.checkpoint(1, loss(snap, f.r, *f.enc).total);
  s.burst(UpdateMode::Joint, 15, f.r, *f.enc);
  const DiscardRecord& rec = s.rollback(1);
  EXPECT_EQ(s.state(), snap);
  EXPECT_EQ(s.step_index(), 10u);
  EXPECT_EQ(rec.from_step, 11u);
  EXPECT_EQ(rec.to_step, 25u);
  EXPECT_EQ(rec.losses.size(), 15u);
  EXPECT_EQ(s.steps_executed(), 25u);
}

TEST(Session, RollbackToLatestIsNoOp) {
  const Fixture f = fixture();
  Session s(0, init_state(3));
  s.burst(UpdateMode::Joint, 5, f.r, *f.enc);
  s.checkpoint(7, 0.0);
  const OptimState before = s.state();
  s.rollback(7);
  EXPECT_EQ(s.state(), before);
}

TEST(Session, ReplayAfterRollbackIsBitwise) {
  const Fixture f = fixture();
  Session s(0, init_state(4));
  s.burst(UpdateMode::Joint, 40, f.r, *f.enc);
  s.checkpoint(1, 0.0);
  s.burst(UpdateMode::Joint, 40, f.r, *f.enc);
  const std::vector<double> original(s.loss_history().begin() + 40, s.loss_history().end());
  const OptimState at80 = s.state();
  s.rollback(1);
  s.burst(UpdateMode::Joint, 40, f.r, *f.enc);
  const std::vector<double> again(s.loss_history().begin() + 40, s.loss_history().end());
  EXPECT_EQ(again, original);
  EXPECT_EQ(s.state(), at80);
}

TEST(Session, UnknownCheckpoint) {
  Session s(0, init_state(5));
  EXPECT_THROW(s.rollback(99), UnknownCheckpoint);
}

TEST(Session, TerminatedRefusesWork) {
  const Fixture f = fixture();
  Session s(0, init_state(5));
  s.terminate();
  EXPECT_THROW(s.burst(UpdateMode::Joint, 1, f.r, *f.enc), SessionTerminated);
}

TEST(Manager, CheckpointIdsOrderedAndPoolGrows) {
  const Fixture f = fixture();
  SessionManager mgr(2);
  Session& s = mgr.create_root(init_state(6));
  s.burst(UpdateMode::Joint, 5, f.r, *f.enc);
  const auto [a, ia] = mgr.checkpoint(s.id(), f.r, *f.enc);
  EXPECT_EQ(mgr.pool().size(), 1u);
  s.burst(UpdateMode::Joint, 5, f.r, *f.enc);
  const auto [b, ib] = mgr.checkpoint(s.id(), f.r, *f.enc);
  EXPECT_EQ(mgr.pool().size(), 2u);
  EXPECT_LT(a, b);
  EXPECT_LT(s.checkpoint_by_id(a).step, s.checkpoint_by_id(b).step);
  EXPECT_EQ(ia, 0u);
  EXPECT_EQ(ib, 1u);
}

TEST(Manager, PoolResidualUsesClippedSnapshot) {
  const Fixture f = fixture();
  SessionManager mgr(0);
  OptimState st = init_state(7);
  st.x(0) = 3.0;  // far outside [0, 1]
  Session& s = mgr.create_root(st);
  mgr.checkpoint(s.id(), f.r, *f.enc);
  OptimState clipped = st;
  clipped.x = st.snapshot().as_vector();
  EXPECT_EQ(mgr.pool().at(0).data_residual, loss(clipped, f.r, *f.enc).data_residual);
}

TEST(Manager, RollbackAcrossSessionsRejected) {
  const Fixture f = fixture();
  SessionManager mgr(1);
  Session& root = mgr.create_root(init_state(8));
  const auto [cid, idx] = mgr.checkpoint(root.id(), f.r, *f.enc);
  Rng rng(9);
  Session& child = mgr.branch(root.id(), rng, 2, 2, InversionHyper{});
  EXPECT_THROW(child.rollback(cid), UnknownCheckpoint);
  (void)idx;
}

TEST(Manager, BranchBudget) {
  SessionManager mgr(5);
  Session& root = mgr.create_root(init_state(10));
  Rng rng(11);
  for (int i = 0; i < 5; ++i) mgr.branch(root.id(), rng, 2, 2, InversionHyper{});
  EXPECT_EQ(mgr.branches_used(), 5);
  EXPECT_THROW(mgr.branch(root.id(), rng, 2, 2, InversionHyper{}), BranchBudgetExhausted);
}

TEST(Manager, BranchStreamsGiveDifferentChannels) {
  SessionManager mgr(2);
  Session& root = mgr.create_root(init_state(12));
  Rng a(13), b(14);
  const CMatrix g1 = mgr.branch(root.id(), a, 2, 2, InversionHyper{}).state().g;
  const CMatrix g2 = mgr.branch(root.id(), b, 2, 2, InversionHyper{}).state().g;
  EXPECT_NE(g1, g2);
}

TEST(Manager, TreeFromParentLinksIsAcyclic) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SessionManager mgr(5);
    Rng rng(seed);
    std::vector<SessionId> live{mgr.create_root(init_state(seed)).id()};
    for (int k = 0; k < 8; ++k) {
      const SessionId parent = live[static_cast<std::size_t>(rng.uniform() * live.size())];
      if (rng.uniform() < 0.6 && mgr.branches_remaining() > 0) {
        live.push_back(mgr.branch(parent, rng, 2, 2, InversionHyper{}).id());
      } else {
        live.push_back(mgr.spawn(init_state(seed + 100 + k), parent).id());
      }
    }
    EXPECT_LE(mgr.branches_used(), 5);
    int roots = 0;
    for (SessionId id : mgr.ids()) {
      std::set<SessionId> seen;
      std::optional<SessionId> cur = id;
      while (cur) {
        ASSERT_TRUE(seen.insert(*cur).second) << "cycle through session " << *cur;
        cur = mgr.get(*cur).parent();
      }
      if (!mgr.get(id).parent()) ++roots;
    }
    EXPECT_EQ(roots, 1);
  }
}

TEST(Checkpoint, SerializationRoundTripBitwise) {
  const Fixture f = fixture();
  Session s(0, init_state(15));
  s.burst(UpdateMode::Joint, 12, f.r, *f.enc);
  s.checkpoint(42, 1.25);
  const Checkpoint& c = s.checkpoints().back();
  EXPECT_EQ(deserialize_checkpoint(serialize_checkpoint(c)), c);
  const auto path = (std::filesystem::temp_directory_path() / "wiretap_ck.bin").string();
  save_checkpoint(c, path);
  EXPECT_EQ(load_checkpoint(path), c);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ResumeFromDiskContinuesBitwise) {
  const Fixture f = fixture();
  Session a(0, init_state(16));
  a.burst(UpdateMode::Joint, 20, f.r, *f.enc);
  a.checkpoint(1, 0.0);
  Checkpoint restored = deserialize_checkpoint(serialize_checkpoint(a.checkpoints().back()));
  a.burst(UpdateMode::ImageOnly, 20, f.r, *f.enc);
  Session b(1, restored.state);
  b.burst(UpdateMode::ImageOnly, 20, f.r, *f.enc);
  EXPECT_EQ(a.state(), b.state());
}

TEST(Checkpoint, CorruptBytesRejected) {
  const Fixture f = fixture();
  Session s(0, init_state(17));
  s.checkpoint(1, 0.0);
  auto bytes = serialize_checkpoint(s.checkpoints().back());
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(deserialize_checkpoint(truncated), CheckpointFormatError);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointFormatError);
  (void)f;
}

TEST(Pool, SelectionRule) {
  std::vector<Candidate> es(3);
  for (std::size_t i = 0; i < es.size(); ++i) es[i].index = i;
  es[0].data_residual = 1.0;
  es[1].data_residual = 1.9;
  es[2].data_residual = 2.5;  // outside 2x the minimum
  Perception lo, hi, top;
  lo.feedback.fused = 0.2;
  hi.feedback.fused = 0.6;
  top.feedback.fused = 0.9;
  es[0].perception = lo;
  es[1].perception = hi;
  es[2].perception = top;
  EXPECT_EQ(select_candidate(es), 1u);
  es[1].perception = lo;
  EXPECT_EQ(select_candidate(es), 0u);  // tie goes to the earlier entry
  EXPECT_FALSE(select_candidate({}).has_value());
}

TEST(Pool, PerceptionAttachedOnce) {
  CandidatePool pool;
  Candidate c;
  c.image = Image(4, 4, 0.5);
  const auto i = pool.append(c);
  pool.attach_perception(i, Perception{});
  EXPECT_THROW(pool.attach_perception(i, Perception{}), std::logic_error);
}
