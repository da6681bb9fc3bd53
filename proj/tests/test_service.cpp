#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fixture_server.hpp"
#include "freediff/analysis.hpp"
#include "freediff/config.hpp"
#include "freediff/denoiser.hpp"
#include "freediff/latent_io.hpp"
#include "freediff/service/session_store.hpp"
#include "service_harness.hpp"
#include "test_support.hpp"

using namespace freediff;
using namespace freediff::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const Shape kShape{4, 32, 32};

std::string prior_latent_bytes(std::uint64_t seed, Shape shape = kShape) {
  std::mt19937_64 rng(seed);
  const auto power = prior_power_map(radial_grid(shape.height, shape.width), PowerLawPrior{});
  return encode_latent(sample_gaussian_field(shape, power, rng));
}

json small_config() { return json{{"source_condition", "pattern:blob"}}; }

std::string create(ServiceHarness& h, const json& config = small_config()) {
  const auto r = h.post_json("/sessions", config);
  REQUIRE(r.status == 201);
  return r.body["id"];
}

std::string upload_and_invert(ServiceHarness& h, const std::string& id, std::uint64_t seed = 1) {
  REQUIRE(h.post_bytes("/sessions/" + id + "/latent", prior_latent_bytes(seed)).status == 200);
  const auto inv = h.post_json("/sessions/" + id + "/invert", json::object());
  REQUIRE(inv.status == 202);
  const auto seen = h.poll(id, inv.body["job"]);
  REQUIRE(seen.back()["state"] == "done");
  return inv.body["job"];
}

}  // namespace

TEST_CASE("session lifecycle with the first SF-1 preset") {
  ServiceHarness h({fresh_dir("svc_life"), ""});
  const std::string id = create(h);
  CHECK(h.get("/sessions/" + id).body["state"] == "created");
  CHECK(h.get("/sessions").body["sessions"] == json::array({id}));

  const auto up = h.post_bytes("/sessions/" + id + "/latent", prior_latent_bytes(3));
  REQUIRE(up.status == 200);
  CHECK(up.body["shape"] == json::array({4, 32, 32}));

  const auto inv = h.post_json("/sessions/" + id + "/invert", json::object());
  REQUIRE(inv.status == 202);
  CHECK(inv.body["progress"]["step"] == 0);
  const auto inv_seen = h.poll(id, inv.body["job"]);
  CHECK(inv_seen.back()["state"] == "done");
  CHECK(inv_seen.back()["step"] == inv_seen.back()["total"]);
  CHECK(inv_seen.back()["phase"] == "done");
  CHECK(h.get("/sessions/" + id).body["state"] == "inverted");

  const auto summary = h.get("/sessions/" + id + "/artifacts/inversion.json");
  REQUIRE(summary.status == 200);
  CHECK(summary.body["summary"]["recon_rel_error"].get<double>() < 1e-3);
  CHECK(summary.body["summary"]["recon_ok"] == true);
  CHECK(summary.body["steps"].size() == 50);
  const auto xT = h.get("/sessions/" + id + "/artifacts/xT.fdlt");
  REQUIRE(xT.status == 200);
  CHECK(decode_latent(xT.raw).shape() == kShape);

  const auto ed = h.post_json("/sessions/" + id + "/edit", {{"preset", "sf1.0"}, {"condition", "pattern:blob"}});
  REQUIRE(ed.status == 202);
  const auto seen = h.poll(id, ed.body["job"]);
  const json& last = seen.back();
  REQUIRE(last["state"] == "done");
  CHECK(last["step"] == 50);
  CHECK(last["total"] == 50);
  CHECK(last["timings"].size() == 50);
  std::size_t previous = 0;
  for (const auto& p : seen) {
    const std::size_t step = p["step"];
    CHECK(step >= previous);
    CHECK(step <= p["total"].get<std::size_t>());
    previous = step;
  }
  CHECK(h.get("/sessions/" + id).body["state"] == "done");

  const auto steps = h.get("/sessions/" + id + "/artifacts/steps.json");
  REQUIRE(steps.body.size() == 50);
  for (const auto& st : steps.body) {
    const int t = st["t"];
    const auto gstar = decode_latent(h.get("/sessions/" + id + "/artifacts/" + st["artifacts"]["refined_guidance"].get<std::string>()).raw);
    const auto g = decode_latent(h.get("/sessions/" + id + "/artifacts/g_t" + std::to_string(t) + ".fdlt").raw);
    if (t >= 781) CHECK(gstar.max_abs() == 0.0);
    CHECK(g.max_abs() > 0.0);
  }
  const auto spec = h.get("/sessions/" + id + "/artifacts/spectrum_t581.json");
  REQUIRE(spec.status == 200);
  CHECK(spec.body["radial_profile"].size() == 17);
  CHECK(decode_latent(h.get("/sessions/" + id + "/artifacts/x0_final.fdlt").raw).shape() == kShape);

  const auto listing = h.get("/sessions/" + id + "/artifacts").body["artifacts"];
  const std::set<std::string> names(listing.begin(), listing.end());
  CHECK(names.contains("x0pred_t1.fdlt"));
  CHECK(names.contains("source.fdlt"));

  const auto fd = h.get("/sessions/" + id + "/fdiff?a=x0_final.fdlt&b=source.fdlt");
  REQUIRE(fd.status == 200);
  CHECK(fd.body["values"].size() == 32 * 32);
  const auto self = h.get("/sessions/" + id + "/fdiff?a=x0_final.fdlt&b=x0_final.fdlt");
  for (double v : self.body["values"]) CHECK(v == 0.0);

  CHECK(h.post_json("/sessions/" + id + "/edit", {{"preset", "sf1.0"}, {"condition", "pattern:blob"}}).status == 409);
  CHECK(h.del("/sessions/" + id).status == 200);
  CHECK(h.get("/sessions/" + id).status == 404);
}

TEST_CASE("request errors map to status codes") {
  ServiceHarness h({fresh_dir("svc_err"), ""});

  auto bad = h.post_json("/sessions", {{"schedule", {{"gamma", 0}}}});
  CHECK(bad.status == 400);
  CHECK(bad.body["field"] == "gamma");
  bad = h.post_json("/sessions", {{"truncation", {{"segments", {{{"tau", 500}, {"r_h", 4}}, {{"tau", 500}, {"r_h", 2}}}}}}});
  CHECK(bad.status == 400);
  CHECK(bad.body["field"] == "segments");
  CHECK(h.client().Post("/sessions", "{not json", "application/json")->status == 400);

  const std::string id = create(h);
  CHECK(h.get("/sessions/ffffffffffffffff").status == 404);
  CHECK(h.get("/sessions/" + id + "/jobs/nope").status == 404);

  const auto pre = h.post_json("/sessions/" + id + "/invert", json::object());
  CHECK(pre.status == 412);
  const auto pre_edit = h.post_json("/sessions/" + id + "/edit", {{"preset", "sf1.0"}, {"condition", "pattern:blob"}});
  CHECK(pre_edit.status == 412);

  std::string bytes = prior_latent_bytes(4);
  bytes[0] = 'X';
  const auto magic = h.post_bytes("/sessions/" + id + "/latent", bytes);
  CHECK(magic.status == 422);
  CHECK(magic.body["field"] == "magic");
  CHECK(h.post_bytes("/sessions/" + id + "/latent", "").status == 422);

  upload_and_invert(h, id);
  CHECK(h.post_bytes("/sessions/" + id + "/latent", prior_latent_bytes(5)).status == 409);
  CHECK(h.post_json("/sessions/" + id + "/invert", json::object()).status == 409);

  const auto unknown = h.post_json("/sessions/" + id + "/edit", {{"preset", "sf9.9"}, {"condition", "pattern:blob"}});
  CHECK(unknown.status == 404);
  CHECK(unknown.body["field"] == "preset");
  const auto sf0 = h.post_json("/sessions/" + id + "/edit", {{"preset", "sf0"}, {"condition", "pattern:blob"}});
  CHECK(sf0.status == 422);
  CHECK(sf0.body["error"].get<std::string>().find("two-step") != std::string::npos);
  const auto nocond = h.post_json("/sessions/" + id + "/edit", {{"preset", "sf1.0"}});
  CHECK(nocond.status == 400);
  CHECK(nocond.body["field"] == "condition");
  CHECK(h.post_json("/sessions/" + id + "/edit",
                    {{"preset", "sf1.0"}, {"schedule", schedule_to_json(load_preset("sf1.0"))}, {"condition", "pattern:blob"}})
            .status == 400);

  CHECK(h.get("/sessions/" + id + "/artifacts/nothing.fdlt").status == 404);
  CHECK(h.get("/sessions/" + id + "/artifacts/manifest.json").status == 404);
  for (const std::string probe : {"../manifest.json", "..%2Fmanifest.json", "%2e%2e%2fmanifest.json", ".hidden"}) {
    const auto r = h.get("/sessions/" + id + "/artifacts/" + probe);
    CHECK(r.status >= 400);
    CHECK(r.raw.find("\"config\"") == std::string::npos);
  }
}

TEST_CASE("presets endpoint") {
  ServiceHarness h({fresh_dir("svc_presets"), ""});
  const auto a = h.get("/presets"), b = h.get("/presets");
  REQUIRE(a.status == 200);
  CHECK(a.body == b.body);
  CHECK(a.body == preset_catalog_json());
  int sf1 = 0, sf2 = 0;
  for (const auto& e : a.body["presets"]) {
    sf1 += e["category"] == "SF-1";
    sf2 += e["category"] == "SF-2";
    if (e["category"] == "SF-0") CHECK(e["two_step"] == true);
  }
  CHECK(sf1 == 3);
  CHECK(sf2 == 2);
}

TEST_CASE("refiner failure marks the session failed with the step") {
  ServiceHarness h({fresh_dir("svc_fail"), ""});
  const std::string id = create(h);
  upload_and_invert(h, id);
  json schedule{{"segments", {{{"tau", 1}, {"r_h", 2}}}}, {"horizon", 900}};
  const auto ed = h.post_json("/sessions/" + id + "/edit", {{"schedule", schedule}, {"condition", "pattern:blob"}});
  REQUIRE(ed.status == 202);
  const auto last = h.poll(id, ed.body["job"]).back();
  CHECK(last["state"] == "failed");
  CHECK(last["phase"] == "failed");
  CHECK(last["failed_step"] == 0);
  CHECK(last["error_kind"] == "schedule");
  const auto snap = h.get("/sessions/" + id).body;
  CHECK(snap["state"] == "failed");
}

TEST_CASE("remote backend failure mid-run") {
  // Inversion with 3 steps and 1 fixed-point iteration makes 6 calls, the
  // regeneration check 3 more; the edit then fails on its second step.
  FixtureDenoiserServer fixture(FixtureDenoiserServer::Mode::Zeros, 10);
  ServiceHarness h({fresh_dir("svc_remote"), ""});
  const std::string id = create(h, {{"schedule", {{"steps", 3}}},
                                    {"sampler", {{"fp_iters", 1}}},
                                    {"backend", {{"kind", "remote"}, {"endpoint", fixture.endpoint()}}}});
  upload_and_invert(h, id);
  const auto ed = h.post_json("/sessions/" + id + "/edit", {{"condition", "text:a red hat"}});
  REQUIRE(ed.status == 202);
  const auto last = h.poll(id, ed.body["job"]).back();
  CHECK(last["state"] == "failed");
  CHECK(last["failed_step"] == 1);
  CHECK(last["error"].get<std::string>().find("model exploded") != std::string::npos);
  CHECK(h.get("/sessions/" + id).body["state"] == "failed");
}

TEST_CASE("two-step edit through the service") {
  ServiceHarness h({fresh_dir("svc_two"), ""});
  const std::string id = create(h, {{"source_condition", "pattern:blob"},
                                    {"schedule", {{"steps", 10}}},
                                    {"backend", {{"patterns", {{"blob", json::object()}, {"hat", {{"center_y", 0.3}}}}}}}});
  upload_and_invert(h, id);
  const auto ed = h.post_json("/sessions/" + id + "/edit",
                              {{"preset", "sf0"}, {"condition", "pattern:blob"},
                               {"two_step", {{"descriptor", "pattern:hat"}}}});
  REQUIRE(ed.status == 202);
  const auto seen = h.poll(id, ed.body["job"]);
  REQUIRE(seen.back()["state"] == "done");
  CHECK(seen.back()["total"] == 20);
  std::set<std::string> phases;
  for (const auto& p : seen) phases.insert(p["phase"].get<std::string>());
  CHECK(phases.contains("done"));
  const auto mask = decode_latent(h.get("/sessions/" + id + "/artifacts/mask.fdlt").raw);
  CHECK(mask.shape() == Shape{1, 32, 32});
  CHECK(h.get("/sessions/" + id + "/artifacts/descriptor_x0.fdlt").status == 200);
}

TEST_CASE("restart re-indexes sessions") {
  const fs::path root = fresh_dir("svc_restart");
  std::string done_id, busy_id;
  std::map<std::string, std::string> before;
  {
    ServiceHarness h({root, ""});
    done_id = create(h);
    upload_and_invert(h, done_id);
    const auto ed = h.post_json("/sessions/" + done_id + "/edit", {{"preset", "sf2.0"}, {"condition", "pattern:blob"}});
    REQUIRE(h.poll(done_id, ed.body["job"]).back()["state"] == "done");
    const json names = h.get("/sessions/" + done_id + "/artifacts").body["artifacts"];
    for (const auto& name : names) {
      before[name] = h.get("/sessions/" + done_id + "/artifacts/" + name.get<std::string>()).raw;
    }
    busy_id = create(h);
    upload_and_invert(h, busy_id);
  }
  // Pretend the second session was mid-edit when the process died.
  const fs::path manifest = root / busy_id / "manifest.json";
  json doc = json::parse(std::ifstream(manifest));
  doc["state"] = "editing";
  json job = doc["jobs"][0];
  job["id"] = "deadbeef";
  job["kind"] = "edit";
  job["state"] = "running";
  job["step"] = 7;
  job["phase"] = "generate";
  doc["jobs"].push_back(job);
  std::ofstream(manifest) << doc.dump();

  ServiceHarness h({root, ""});
  const auto ids = h.get("/sessions").body["sessions"];
  CHECK(ids.size() == 2);
  CHECK(h.get("/sessions/" + done_id).body["state"] == "done");
  CHECK(h.get("/sessions/" + done_id + "/artifacts").body["artifacts"].size() == before.size());
  for (const auto& [name, bytes] : before) {
    CHECK(h.get("/sessions/" + done_id + "/artifacts/" + name).raw == bytes);
  }
  CHECK(h.get("/sessions/" + busy_id).body["state"] == "failed");
  const auto j = h.get("/sessions/" + busy_id + "/jobs/deadbeef").body;
  CHECK(j["state"] == "failed");
  CHECK(j["failed_step"] == 7);
}

TEST_CASE("sessions run concurrently in separate directories") {
  ServiceHarness h({fresh_dir("svc_conc"), ""});
  const std::string a = create(h), b = create(h);
  REQUIRE(h.post_bytes("/sessions/" + a + "/latent", prior_latent_bytes(11)).status == 200);
  REQUIRE(h.post_bytes("/sessions/" + b + "/latent", prior_latent_bytes(12)).status == 200);
  const auto ja = h.post_json("/sessions/" + a + "/invert", json::object());
  const auto jb = h.post_json("/sessions/" + b + "/invert", json::object());
  REQUIRE(h.poll(a, ja.body["job"]).back()["state"] == "done");
  REQUIRE(h.poll(b, jb.body["job"]).back()["state"] == "done");
  const auto xa = h.get("/sessions/" + a + "/artifacts/source.fdlt").raw;
  const auto xb = h.get("/sessions/" + b + "/artifacts/source.fdlt").raw;
  CHECK(xa == prior_latent_bytes(11));
  CHECK(xb == prior_latent_bytes(12));
  const auto cross = h.get("/sessions/" + a + "/fdiff?a=source.fdlt&b=source.fdlt&other=" + b);
  REQUIRE(cross.status == 200);
  double sum = 0.0;
  for (double v : cross.body["values"]) sum += v;
  CHECK(sum > 0.0);
}
