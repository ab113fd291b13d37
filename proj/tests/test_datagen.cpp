#include <doctest.h>

TEST_SUITE_BEGIN("datagen");
TEST_SUITE_END();
