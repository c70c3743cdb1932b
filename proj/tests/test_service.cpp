#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "creward/image.hpp"
#include "creward/reward.hpp"
#include "creward/service.hpp"
#include "support.hpp"

#include <httplib.h>

using namespace creward;
using creward::testing::TempDir;

namespace {

constexpr int kImages = 25;
constexpr int kPairs = 100;

// Images, pairs, five sessions and optionally scores, written to disk.
struct Fixture {
  TempDir dir;
  std::vector<ImageRecord> images;
  std::vector<PairRecord> pairs;
  std::vector<SessionConfig> sessions;

  explicit Fixture(bool with_scores = true) {
    std::filesystem::create_directories(dir / "img");
    std::vector<Json> rows;
    for (int i = 0; i < kImages; ++i) {
      const Image img = synthesize_image(static_cast<std::uint64_t>(i), 16, i % 5 == 0);
      ImageRecord r;
      r.image_id = make_image_id(encode_ppm(img), static_cast<std::uint64_t>(i));
      r.object_category = "chair";
      r.source_model = "fixture";
      r.prompt_id = "prompt" + std::to_string(i / 3);
      r.uri = "img/" + std::to_string(i) + ".ppm";
      save_image(dir / r.uri, img);
      images.push_back(r);
      rows.push_back(to_json(r));
    }
    write_jsonl(dir / "images.jsonl", rows);
    rows.clear();
    for (int p = 0; p < kPairs; ++p) {
      const auto& a = images[static_cast<std::size_t>(p % kImages)];
      const auto& b = images[static_cast<std::size_t>((p / kImages + 1 + p) % kImages)];
      pairs.push_back({make_pair_id(a.image_id, b.image_id, PairContext::benchmark, static_cast<std::uint64_t>(p)),
                       a.image_id, b.image_id});
      rows.push_back(to_json(pairs.back()));
    }
    write_jsonl(dir / "pairs.jsonl", rows);
    rows.clear();
    for (int s = 0; s < 5; ++s) {
      sessions.push_back({"s" + std::to_string(s), "human-" + std::to_string(s), static_cast<std::uint64_t>(s + 10)});
      rows.push_back({{"session_id", sessions.back().session_id},
                      {"annotator_id", sessions.back().annotator_id},
                      {"seed", sessions.back().seed}});
    }
    write_jsonl(dir / "sessions.jsonl", rows);
    if (with_scores) {
      ScoreTable scores;
      for (int i = 0; i < kImages; ++i) scores[images[static_cast<std::size_t>(i)].image_id].fill(i * 0.1);
      write_scores(dir / "scores.jsonl", scores);
    }
    std::string config = "# test service\npairs = pairs.jsonl\nimages = images.jsonl\nlabels = labels.jsonl\n"
                         "sessions = sessions.jsonl\n";
    if (with_scores) config += "scores = scores.jsonl\n";
    write_text(dir / "service.conf", config);
  }

  std::unique_ptr<Service> service(LabelStore& store) const {
    const auto cfg = read_service_config(dir / "service.conf");
    return std::make_unique<Service>(read_pairs(cfg.pairs), read_images(cfg.images), store, read_sessions(cfg.sessions),
                                     cfg.scores, cfg.image_root, [] { return std::string("2025-01-01T00:00:00Z"); });
  }
};

// Runs the HTTP front end on an ephemeral port for the lifetime of the object.
struct LiveServer {
  std::unique_ptr<httplib::Server> server;
  std::thread thread;
  int port = 0;

  explicit LiveServer(Service& service) : server(make_http_server(service)) {
    port = server->bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server->listen_after_bind(); });
    server->wait_until_ready();
  }
  ~LiveServer() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

Json verdicts_body(const std::string& pair_id) {
  return {{"pair_id", pair_id},
          {"verdicts", {{"geometry", "A"}, {"material", "B"}, {"texture", "Tie"}, {"overall", "A"}}}};
}

}  // namespace

TEST(ServiceConfig, ParsesAndResolvesRelativePaths) {
  Fixture f;
  const auto cfg = read_service_config(f.dir / "service.conf");
  EXPECT_EQ(cfg.pairs, f.dir / "pairs.jsonl");
  EXPECT_EQ(*cfg.scores, f.dir / "scores.jsonl");
  EXPECT_EQ(cfg.image_root, f.dir.path());
  EXPECT_EQ(cfg.port, 8080);

  write_text(f.dir / "unknown.conf", "pairs = p\nimages = i\nlabels = l\nsessions = s\ncolour = red\n");
  EXPECT_THROW(read_service_config(f.dir / "unknown.conf"), Error);
  write_text(f.dir / "missing.conf", "pairs = p\nimages = i\n");
  try {
    read_service_config(f.dir / "missing.conf");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "config");
  }
}

TEST(Sessions, DuplicateIdsAreRejected) {
  TempDir dir;
  write_text(dir / "s.jsonl", "{\"session_id\":\"a\",\"annotator_id\":\"x\",\"seed\":1}\n"
                              "{\"session_id\":\"a\",\"annotator_id\":\"y\",\"seed\":2}\n");
  EXPECT_THROW(read_sessions(dir / "s.jsonl"), Error);
}

TEST(Service, QueueIsSeededPermutation) {
  Fixture f;
  LabelStore store;
  auto svc = f.service(store);
  const auto q0 = svc->queue("s0");
  EXPECT_EQ(q0.size(), static_cast<std::size_t>(kPairs));
  EXPECT_EQ(std::set<std::string>(q0.begin(), q0.end()).size(), q0.size());
  EXPECT_EQ(svc->queue("s0"), q0);
  EXPECT_NE(svc->queue("s1"), q0);
}

TEST(Service, SubmitContract) {
  Fixture f;
  LabelStore store;
  auto svc = f.service(store);
  const auto next = svc->next("s0");
  ASSERT_EQ(next.status, 200);
  EXPECT_EQ(next.body.at("status"), "pending");
  const std::string head = next.body.at("pair_id");
  EXPECT_EQ(next.body.at("image_a").at("url").get<std::string>().rfind("/images/", 0), 0u);

  EXPECT_EQ(svc->submit("s0", {{"pair_id", head}}).status, 422);
  Json bad = verdicts_body(head);
  bad["verdicts"]["texture"] = "C";
  EXPECT_EQ(svc->submit("s0", bad).status, 422);
  EXPECT_EQ(svc->submit("s0", verdicts_body(svc->queue("s0")[1])).status, 409);
  EXPECT_EQ(svc->submit("nobody", verdicts_body(head)).status, 404);
  EXPECT_EQ(svc->next("nobody").status, 404);

  const auto stored = svc->submit("s0", verdicts_body(head));
  EXPECT_EQ(stored.status, 200);
  EXPECT_EQ(stored.body.at("duplicate"), false);
  const auto dup = svc->submit("s0", verdicts_body(head));
  EXPECT_EQ(dup.status, 200);
  EXPECT_EQ(dup.body.at("duplicate"), true);
  EXPECT_EQ(store.size(), 1u);
  const auto label = store.find(head, "human-0", "human-v1");
  ASSERT_TRUE(label);
  EXPECT_EQ(label->verdicts[1], Verdict::b);
  EXPECT_EQ(label->timestamp, "2025-01-01T00:00:00Z");
  EXPECT_NE(svc->next("s0").body.at("pair_id"), head);
}

TEST(Service, FiveSessionsOverHttpStoreExactlyFiveHundredLabels) {
  Fixture f;
  {
    LabelStore store(f.dir / "labels.jsonl");
    auto svc = f.service(store);
    LiveServer live(*svc);
    std::vector<std::thread> annotators;
    std::atomic<int> errors{0};
    for (const auto& s : f.sessions) {
      annotators.emplace_back([&, id = s.session_id] {
        auto cli = live.client();
        for (;;) {
          auto res = cli.Get("/session/" + id + "/next");
          if (!res || res->status != 200) {
            ++errors;
            return;
          }
          const Json body = Json::parse(res->body);
          if (body.at("status") == "done") return;
          const std::string pair = body.at("pair_id");
          // Submit twice: the second must be acknowledged as a duplicate.
          for (int attempt = 0; attempt < 2; ++attempt) {
            auto post = cli.Post("/session/" + id + "/label", verdicts_body(pair).dump(), "application/json");
            if (!post || post->status != 200 || Json::parse(post->body).at("duplicate") != (attempt == 1)) ++errors;
          }
        }
      });
    }
    for (auto& t : annotators) t.join();
    EXPECT_EQ(errors.load(), 0);
    EXPECT_EQ(store.size(), 500u);

    auto cli = live.client();
    const auto progress = Json::parse(cli.Get("/progress")->body);
    EXPECT_EQ(progress.at("labels"), 500);
    const auto done = Json::parse(cli.Get("/session/s3/next")->body);
    EXPECT_EQ(done.at("status"), "done");
  }
  // Every (pair, annotator) exactly once on disk.
  LabelStore replayed(f.dir / "labels.jsonl");
  EXPECT_EQ(replayed.size(), 500u);
  const auto text = read_text(f.dir / "labels.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 500);
}

TEST(Service, ConcurrentNextIsConsistent) {
  Fixture f;
  LabelStore store;
  auto svc = f.service(store);
  LiveServer live(*svc);
  std::vector<std::string> heads(8);
  std::vector<std::thread> readers;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    readers.emplace_back([&, i] {
      auto cli = live.client();
      heads[i] = Json::parse(cli.Get("/session/s2/next")->body).at("pair_id");
    });
  }
  for (auto& t : readers) t.join();
  EXPECT_EQ(std::set<std::string>(heads.begin(), heads.end()).size(), 1u);
  EXPECT_EQ(heads[0], svc->queue("s2")[0]);
}

TEST(Service, ResumesAfterRestart) {
  Fixture f;
  std::vector<std::string> original;
  {
    LabelStore store(f.dir / "labels.jsonl");
    auto svc = f.service(store);
    original = svc->queue("s1");
    for (int i = 0; i < 30; ++i) ASSERT_EQ(svc->submit("s1", verdicts_body(original[static_cast<std::size_t>(i)])).status, 200);
  }
  LabelStore store(f.dir / "labels.jsonl");
  auto svc = f.service(store);
  const auto resumed = svc->queue("s1");
  EXPECT_EQ(resumed, std::vector<std::string>(original.begin() + 30, original.end()));
  EXPECT_EQ(svc->next("s1").body.at("progress").at("completed"), 30);
}

TEST(Service, HttpErrorsAndImages) {
  Fixture f;
  LabelStore store;
  auto svc = f.service(store);
  LiveServer live(*svc);
  auto cli = live.client();
  auto bad = cli.Post("/session/s0/label", "not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(Json::parse(bad->body).at("error").contains("kind"), true);
  EXPECT_EQ(cli.Get("/session/zz/next")->status, 404);

  const Json next = Json::parse(cli.Get("/session/s0/next")->body);
  const std::string url = next.at("image_a").at("url");
  auto img = cli.Get(url);
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/x-portable-pixmap");
  EXPECT_EQ(decode_ppm(img->body).width, 16);
  EXPECT_EQ(cli.Get("/images/deadbeef")->status, 404);
}

TEST(Service, Gallery) {
  Fixture f;
  LabelStore store;
  auto svc = f.service(store);
  LiveServer live(*svc);
  auto cli = live.client();
  EXPECT_EQ(cli.Get("/gallery")->status, 400);
  EXPECT_EQ(cli.Get("/gallery?type=colour")->status, 400);
  EXPECT_EQ(cli.Get("/gallery?type=overall&k=-1")->status, 400);

  const auto zero = Json::parse(cli.Get("/gallery?type=overall&k=0")->body);
  EXPECT_EQ(zero.at("items").size(), 0u);

  const auto top = Json::parse(cli.Get("/gallery?type=texture&k=3")->body);
  ASSERT_EQ(top.at("items").size(), 3u);
  EXPECT_EQ(top.at("group_by_prompt"), true);
  // Scores grow with the image index; prompts group three images each.
  EXPECT_EQ(top.at("items")[0].at("image_id"), f.images[24].image_id);
  EXPECT_EQ(top.at("items")[1].at("image_id"), f.images[23].image_id);
  EXPECT_EQ(top.at("items")[2].at("image_id"), f.images[20].image_id);

  const auto flat = Json::parse(cli.Get("/gallery?type=texture&k=2&group_by_prompt=false")->body);
  EXPECT_EQ(flat.at("items")[1].at("image_id"), f.images[23].image_id);
  EXPECT_EQ(flat.at("candidates"), kImages);

  EXPECT_EQ(cli.Get("/gallery?type=overall&k=1000")->status, 400);
}

TEST(Service, GalleryWithoutScores) {
  Fixture f(false);
  LabelStore store;
  auto svc = f.service(store);
  const auto res = svc->gallery({{"type", "overall"}});
  EXPECT_EQ(res.status, 409);
  EXPECT_EQ(res.body.at("error").at("kind"), "no-scores");
}
