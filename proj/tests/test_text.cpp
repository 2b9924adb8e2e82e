#include "falsify/text.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace falsify;

TEST(Text, NormalizeLabel) {
    EXPECT_EQ(text::normalize_label("  Atelectasis. "), "atelectasis");
    EXPECT_EQ(text::normalize_label("Congestive   Heart\tFailure!?"), "congestive heart failure");
    EXPECT_EQ(text::normalize_label("Pleural effusion"), text::normalize_label("pleural EFFUSION."));
    EXPECT_EQ(text::normalize_label(""), "");
}

TEST(Text, TokenizeAndSplit) {
    EXPECT_EQ(text::tokenize("Sharp C-P angle, 2cm!"), (std::vector<std::string>{"sharp", "c", "p", "angle", "2cm"}));
    EXPECT_EQ(text::split("a,b,,c", ','), (std::vector<std::string>{"a", "b", "", "c"}));
    EXPECT_TRUE(text::starts_with_ci("Hypothesis: x", "hypothesis"));
    EXPECT_FALSE(text::starts_with_ci("Hyp", "hypothesis"));
}

TEST(Fs, AtomicWriteReplacesContents) {
    falsify::testing::TempDir tmp("fs");
    const auto p = tmp.path() / "out.txt";
    fsutil::write_file_atomic(p, "one");
    fsutil::write_file_atomic(p, "two");
    EXPECT_EQ(fsutil::read_file(p), "two");
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(tmp.path()), {}), 1);
    EXPECT_ERRC(fsutil::read_file(tmp.path() / "missing"), Errc::FileMissing);
}
