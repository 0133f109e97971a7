# Tests for Orzion Chat Backend
