#include <doctest.h>

TEST_SUITE_BEGIN("search");
TEST_SUITE_END();
