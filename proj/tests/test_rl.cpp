#include <doctest.h>

TEST_SUITE_BEGIN("rl");
TEST_SUITE_END();
