#include <doctest.h>

TEST_SUITE_BEGIN("rank");
TEST_SUITE_END();
