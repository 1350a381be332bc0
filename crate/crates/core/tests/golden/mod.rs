//! Hand-computed feature vectors for twenty (query, snippet) pairs and
//! generators for random feature inputs. Shared with the acceptance
//! harness of the cli crate.
//!
//! Every expected value below was worked out by hand from the feature
//! definitions: character counts are Unicode scalar values, tokens are
//! lowercased alphanumeric runs, and segments are the period or ellipsis
//! separated pieces of the abstract.

use std::collections::BTreeSet;

use proptest::prelude::*;
use tailrank::corpus::{Query, Snippet, UrlStats};
use tailrank::features::{extract_features, AttractiveLexicon, LexiconEntry, SnippetFeatures, TopLevelDomain};

pub fn lexicon() -> AttractiveLexicon {
    AttractiveLexicon::from_entries(["free", "official", "best"].map(|w| LexiconEntry {
        word: w.into(),
        t: 3.0,
        p: 0.001,
    }))
}

pub fn stats(url: &str, views: u64, expanded: &[&str]) -> UrlStats {
    UrlStats {
        url: url.into(),
        num_views: views,
        expanded_queries: expanded.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
    }
}

pub fn extract(query: &str, url: &str, title: &str, abs: &str, st: Option<UrlStats>) -> SnippetFeatures {
    let q = Query::new(query).unwrap();
    let s = Snippet::new(url, title, abs);
    extract_features(&q, &s, st.as_ref(), &lexicon())
}

/// `(name, extracted, expected)` for every fixture.
pub fn fixtures() -> Vec<(&'static str, SnippetFeatures, SnippetFeatures)> {
    vec![
        {
            let url = "https://en.wikipedia.org/wiki/Cougar";
            let got = extract(
                "puma concolor",
                url,
                "Cougar - Wikipedia",
                "The cougar is a large cat of the family Felidae.",
                Some(stats(url, 42, &["puma concolor", "cougar", "puma"])),
            );
            let want = SnippetFeatures {
                num_chars_snippet: 66.0,
                num_words_snippet: 12.0,
                num_segments: 1.0,
                num_word_init_cap: 4.0,
                frac_word_init_cap: 4.0 / 12.0,
                num_cap_char_title_url: 3.0,
                frac_cap_char_title_abstract: 4.0 / 66.0,
                frac_attr_word: 0.0,
                url_num_chars: 36.0,
                top_level_domain: TopLevelDomain::Org,
                num_level_domain: 3.0,
                num_views: 42.0,
                num_match: 0.0,
                num_uniq_match: 0.0,
                num_apx_match: 0.0,
                frac_match: 0.0,
                frac_apx_match: 0.0,
                num_bef_match: 12.0,
                num_btw_match: 0.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 0.0,
                frac_match_expanded: 0.5,
            };
            ("puma_concolor", got, want)
        },
        {
            let got = extract(
                "cheap flights",
                "www.travel.com/flights",
                "Cheap Flights to Paris",
                "Book cheap flights today. Compare airlines.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 65.0,
                num_words_snippet: 10.0,
                num_segments: 2.0,
                num_word_init_cap: 5.0,
                frac_word_init_cap: 0.5,
                num_cap_char_title_url: 3.0,
                frac_cap_char_title_abstract: 5.0 / 65.0,
                frac_attr_word: 0.0,
                url_num_chars: 22.0,
                top_level_domain: TopLevelDomain::Com,
                num_level_domain: 3.0,
                num_views: 0.0,
                num_match: 4.0,
                num_uniq_match: 2.0,
                num_apx_match: 4.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("exact_phrase_in_title", got, want)
        },
        {
            let got = extract(
                "paris hotels",
                "http://example.net/stay",
                "Hotels in Paris",
                "Luxury stays. Central location.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 46.0,
                num_words_snippet: 7.0,
                num_segments: 2.0,
                num_word_init_cap: 4.0,
                frac_word_init_cap: 4.0 / 7.0,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 4.0 / 46.0,
                frac_attr_word: 0.0,
                url_num_chars: 23.0,
                top_level_domain: TopLevelDomain::Net,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 1.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("reversed_terms_in_title", got, want)
        },
        {
            let got = extract(
                "red apple",
                "https://fruit.example.org/",
                "Fresh red fruit",
                "A crisp apple. Grown locally.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 44.0,
                num_words_snippet: 8.0,
                num_segments: 2.0,
                num_word_init_cap: 3.0,
                frac_word_init_cap: 3.0 / 8.0,
                num_cap_char_title_url: 1.0,
                frac_cap_char_title_abstract: 3.0 / 44.0,
                frac_attr_word: 0.0,
                url_num_chars: 26.0,
                top_level_domain: TopLevelDomain::Org,
                num_level_domain: 3.0,
                num_views: 0.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 0.5,
                num_bef_match: 1.0,
                num_btw_match: 3.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 0.0,
                frac_match_expanded: 0.0,
            };
            ("terms_split_between_title_and_abstract", got, want)
        },
        {
            let got = extract(
                "restaurant reviews",
                "reviews.com",
                "Resturant Reveiws and Ratings",
                "",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 29.0,
                num_words_snippet: 4.0,
                num_segments: 0.0,
                num_word_init_cap: 3.0,
                frac_word_init_cap: 0.75,
                num_cap_char_title_url: 3.0,
                frac_cap_char_title_abstract: 3.0 / 29.0,
                frac_attr_word: 0.0,
                url_num_chars: 11.0,
                top_level_domain: TopLevelDomain::Com,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 0.0,
                num_uniq_match: 0.0,
                // "resturant" is one edit from "restaurant"; "reveiws" is two from "reviews"
                num_apx_match: 1.0,
                frac_match: 0.0,
                // "reviews" also appears in the url
                frac_apx_match: 1.0,
                num_bef_match: 4.0,
                num_btw_match: 0.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 0.0,
                frac_match_expanded: 0.0,
            };
            ("misspelled_title", got, want)
        },
        {
            let got = extract(
                "jaguar speed",
                "https://cats.info/",
                "Big cats",
                "The jaguar has great speed.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 35.0,
                num_words_snippet: 7.0,
                num_segments: 1.0,
                num_word_init_cap: 2.0,
                frac_word_init_cap: 2.0 / 7.0,
                num_cap_char_title_url: 1.0,
                frac_cap_char_title_abstract: 2.0 / 35.0,
                frac_attr_word: 0.0,
                url_num_chars: 18.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 0.0,
                num_bef_match: 3.0,
                num_btw_match: 2.0,
                is_exact_match: 0.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("abstract_only_match_beats_title_and_url_match", got, want)
        },
        {
            let got = extract(
                "music",
                "https://Music.Example.com/Free",
                "FREE Music - Official Site",
                "Listen now.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 37.0,
                num_words_snippet: 6.0,
                num_segments: 1.0,
                num_word_init_cap: 5.0,
                frac_word_init_cap: 5.0 / 6.0,
                num_cap_char_title_url: 10.0,
                frac_cap_char_title_abstract: 8.0 / 37.0,
                frac_attr_word: 0.5,
                url_num_chars: 30.0,
                top_level_domain: TopLevelDomain::Com,
                num_level_domain: 3.0,
                num_views: 0.0,
                num_match: 1.0,
                num_uniq_match: 1.0,
                num_apx_match: 1.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 1.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("attractive_words_and_capitals", got, want)
        },
        {
            let got = extract(
                "new new york",
                "https://nyc.gov/news",
                "New York news",
                "New stories from new york city.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 44.0,
                num_words_snippet: 9.0,
                num_segments: 1.0,
                num_word_init_cap: 3.0,
                frac_word_init_cap: 3.0 / 9.0,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 3.0 / 44.0,
                frac_attr_word: 0.0,
                url_num_chars: 20.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 5.0,
                num_uniq_match: 2.0,
                num_apx_match: 5.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                // the full token sequence "new new york" never occurs
                is_exact_match: 0.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("repeated_query_token", got, want)
        },
        {
            let got = extract(
                "solar panels",
                "solar.net",
                "Solar Panels",
                "",
                Some(stats("solar.net", 7, &["solar panels"])),
            );
            let want = SnippetFeatures {
                num_chars_snippet: 12.0,
                num_words_snippet: 2.0,
                num_segments: 0.0,
                num_word_init_cap: 2.0,
                frac_word_init_cap: 1.0,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 2.0 / 12.0,
                frac_attr_word: 0.0,
                url_num_chars: 9.0,
                top_level_domain: TopLevelDomain::Net,
                num_level_domain: 2.0,
                num_views: 7.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("query_is_not_its_own_expansion", got, want)
        },
        {
            let got = extract("anything", "https://a.b.c.edu/x", "", "", None);
            let want = SnippetFeatures {
                num_chars_snippet: 0.0,
                num_words_snippet: 0.0,
                num_segments: 0.0,
                num_word_init_cap: 0.0,
                frac_word_init_cap: 0.0,
                num_cap_char_title_url: 0.0,
                frac_cap_char_title_abstract: 0.0,
                frac_attr_word: 0.0,
                url_num_chars: 19.0,
                top_level_domain: TopLevelDomain::Edu,
                num_level_domain: 4.0,
                num_views: 0.0,
                num_match: 0.0,
                num_uniq_match: 0.0,
                num_apx_match: 0.0,
                frac_match: 0.0,
                frac_apx_match: 0.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 0.0,
                frac_match_expanded: 0.0,
            };
            ("empty_snippet", got, want)
        },
        {
            let got = extract("test", "http://", "Test", "A test.", None);
            let want = SnippetFeatures {
                num_chars_snippet: 11.0,
                num_words_snippet: 3.0,
                num_segments: 1.0,
                num_word_init_cap: 2.0,
                frac_word_init_cap: 2.0 / 3.0,
                num_cap_char_title_url: 1.0,
                frac_cap_char_title_abstract: 2.0 / 11.0,
                frac_attr_word: 0.0,
                url_num_chars: 7.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 0.0,
                num_views: 0.0,
                num_match: 2.0,
                num_uniq_match: 1.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("url_without_host", got, want)
        },
        {
            let got = extract(
                "python list sort",
                "https://docs.python.org/3/howto/sorting.html",
                "Sort a list in Python",
                "Use list sort. Python docs.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 48.0,
                num_words_snippet: 10.0,
                num_segments: 2.0,
                num_word_init_cap: 4.0,
                frac_word_init_cap: 0.4,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 4.0 / 48.0,
                frac_attr_word: 0.0,
                url_num_chars: 44.0,
                top_level_domain: TopLevelDomain::Org,
                num_level_domain: 3.0,
                num_views: 0.0,
                num_match: 6.0,
                num_uniq_match: 3.0,
                num_apx_match: 6.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                // "list sort python" straddles the segment boundary
                num_btw_match: 0.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("three_terms_out_of_order", got, want)
        },
        {
            let url = "https://tours.example.com";
            let got = extract(
                "big apple",
                url,
                "Big Apple Tours",
                "See NYC.",
                Some(stats(url, 1000, &["big apple", "nyc apple", "new york"])),
            );
            let want = SnippetFeatures {
                num_chars_snippet: 23.0,
                num_words_snippet: 5.0,
                num_segments: 1.0,
                num_word_init_cap: 5.0,
                frac_word_init_cap: 1.0,
                num_cap_char_title_url: 3.0,
                frac_cap_char_title_abstract: 7.0 / 23.0,
                frac_attr_word: 0.0,
                url_num_chars: 25.0,
                top_level_domain: TopLevelDomain::Com,
                num_level_domain: 3.0,
                num_views: 1000.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.5,
            };
            ("partial_expansion", got, want)
        },
        {
            let got = extract(
                "data science",
                "https://learn.io",
                "Science of Data",
                "Learn data science online.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 41.0,
                num_words_snippet: 7.0,
                num_segments: 1.0,
                num_word_init_cap: 3.0,
                frac_word_init_cap: 3.0 / 7.0,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 3.0 / 41.0,
                frac_attr_word: 0.0,
                url_num_chars: 16.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 4.0,
                num_uniq_match: 2.0,
                num_apx_match: 4.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("phrase_in_abstract_segment", got, want)
        },
        {
            let got = extract("color", "https://colr.com", "Colour Chart", "Colors.", None);
            let want = SnippetFeatures {
                num_chars_snippet: 19.0,
                num_words_snippet: 3.0,
                num_segments: 1.0,
                num_word_init_cap: 3.0,
                frac_word_init_cap: 1.0,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 3.0 / 19.0,
                frac_attr_word: 0.0,
                url_num_chars: 16.0,
                top_level_domain: TopLevelDomain::Com,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 0.0,
                num_uniq_match: 0.0,
                num_apx_match: 2.0,
                frac_match: 0.0,
                frac_apx_match: 1.0,
                num_bef_match: 3.0,
                num_btw_match: 0.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 0.0,
                frac_match_expanded: 0.0,
            };
            ("spelling_variants_within_one_edit", got, want)
        },
        {
            let got = extract("cat", "https://pets.org", "Cats and bats", "", None);
            let want = SnippetFeatures {
                num_chars_snippet: 13.0,
                num_words_snippet: 3.0,
                num_segments: 0.0,
                num_word_init_cap: 1.0,
                frac_word_init_cap: 1.0 / 3.0,
                num_cap_char_title_url: 1.0,
                frac_cap_char_title_abstract: 1.0 / 13.0,
                frac_attr_word: 0.0,
                url_num_chars: 16.0,
                top_level_domain: TopLevelDomain::Org,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 0.0,
                num_uniq_match: 0.0,
                num_apx_match: 0.0,
                frac_match: 0.0,
                frac_apx_match: 0.0,
                num_bef_match: 3.0,
                num_btw_match: 0.0,
                is_exact_match: 0.0,
                is_order_match: 0.0,
                is_seg_match: 0.0,
                frac_match_expanded: 0.0,
            };
            ("short_tokens_need_exact_match", got, want)
        },
        {
            let got = extract(
                "warranty",
                "shop.example.co.uk/info",
                "Product Info",
                "Details below. Warranty covers two years.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 53.0,
                num_words_snippet: 8.0,
                num_segments: 2.0,
                num_word_init_cap: 4.0,
                frac_word_init_cap: 0.5,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 4.0 / 53.0,
                frac_attr_word: 0.0,
                url_num_chars: 23.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 4.0,
                num_views: 0.0,
                num_match: 1.0,
                num_uniq_match: 1.0,
                num_apx_match: 1.0,
                frac_match: 1.0,
                frac_apx_match: 0.0,
                num_bef_match: 4.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("match_deep_in_abstract", got, want)
        },
        {
            let got = extract(
                "C++ Tutorial",
                "https://cpp.dev",
                "C++ tutorial for beginners",
                "",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 26.0,
                num_words_snippet: 4.0,
                num_segments: 0.0,
                num_word_init_cap: 1.0,
                frac_word_init_cap: 0.25,
                num_cap_char_title_url: 1.0,
                frac_cap_char_title_abstract: 1.0 / 26.0,
                frac_attr_word: 0.0,
                url_num_chars: 15.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("punctuation_inside_query", got, want)
        },
        {
            let got = extract(
                "café paris",
                "https://cafe.fr",
                "Café de Paris",
                "Un café à Paris.",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 29.0,
                num_words_snippet: 7.0,
                num_segments: 1.0,
                num_word_init_cap: 4.0,
                frac_word_init_cap: 4.0 / 7.0,
                num_cap_char_title_url: 2.0,
                frac_cap_char_title_abstract: 4.0 / 29.0,
                frac_attr_word: 0.0,
                url_num_chars: 15.0,
                top_level_domain: TopLevelDomain::Others,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 4.0,
                num_uniq_match: 2.0,
                num_apx_match: 4.0,
                frac_match: 1.0,
                // "cafe" in the url is one edit from "café"
                frac_apx_match: 1.0,
                num_bef_match: 0.0,
                num_btw_match: 1.0,
                is_exact_match: 0.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("accented_text", got, want)
        },
        {
            let got = extract(
                "open source",
                "https://github.com/explore",
                "Projects",
                "Community driven\u{2026} Open source tools. More info",
                None,
            );
            let want = SnippetFeatures {
                num_chars_snippet: 54.0,
                num_words_snippet: 8.0,
                num_segments: 3.0,
                num_word_init_cap: 4.0,
                frac_word_init_cap: 0.5,
                num_cap_char_title_url: 1.0,
                frac_cap_char_title_abstract: 4.0 / 54.0,
                frac_attr_word: 0.0,
                url_num_chars: 26.0,
                top_level_domain: TopLevelDomain::Com,
                num_level_domain: 2.0,
                num_views: 0.0,
                num_match: 2.0,
                num_uniq_match: 2.0,
                num_apx_match: 2.0,
                frac_match: 1.0,
                frac_apx_match: 0.0,
                num_bef_match: 3.0,
                num_btw_match: 0.0,
                is_exact_match: 1.0,
                is_order_match: 1.0,
                is_seg_match: 1.0,
                frac_match_expanded: 0.0,
            };
            ("ellipsis_separated_segments", got, want)
        },
    ]
}

const WORDS: [&str; 12] = [
    "best", "cat", "cats", "free", "paris", "pariss", "python", "data", "colour", "color", "new", "york",
];

pub fn text(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec((prop::sample::select(WORDS.to_vec()), any::<bool>(), 0..4u8), 0..max).prop_map(|parts| {
        let mut s = String::new();
        for (w, cap, sep) in parts {
            if cap {
                let mut c = w.chars();
                let first = c.next().unwrap().to_uppercase().to_string();
                s.push_str(&first);
                s.push_str(c.as_str());
            } else {
                s.push_str(w);
            }
            s.push_str([" ", ". ", "\u{2026}", "-"][sep as usize]);
        }
        s
    })
}

pub fn query() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..5).prop_map(|w| w.join(" "))
}

/// Features of a random (query, snippet, url statistics) triple.
pub fn random_features() -> impl Strategy<Value = SnippetFeatures> {
    (
        query(),
        text(8),
        text(16),
        prop::sample::select(vec!["a.com", "b.c.org", "x.net", "y.edu", "z.io"]),
        text(3),
        prop::collection::vec(query(), 0..4),
        0u64..1000,
    )
        .prop_map(|(q, title, abs, host, path, expanded, views)| {
            let url = format!("https://{host}/{}", path.replace(' ', "/"));
            let exp: Vec<&str> = expanded.iter().map(String::as_str).collect();
            extract(&q, &url, &title, &abs, Some(stats(&url, views, &exp)))
        })
}

/// Range and ordering invariants every feature vector satisfies.
pub fn check_ranges(f: &SnippetFeatures) -> Result<(), TestCaseError> {
    for v in [
        f.frac_word_init_cap,
        f.frac_cap_char_title_abstract,
        f.frac_attr_word,
        f.frac_match,
        f.frac_apx_match,
        f.frac_match_expanded,
    ] {
        prop_assert!((0.0..=1.0).contains(&v), "{v} in {f:?}");
    }
    for v in [f.is_exact_match, f.is_order_match, f.is_seg_match] {
        prop_assert!(v == 0.0 || v == 1.0);
    }
    prop_assert!(f.num_match <= f.num_apx_match);
    prop_assert!(f.num_uniq_match <= f.num_match);
    prop_assert!(f.num_bef_match <= f.num_words_snippet);
    prop_assert!(f.num_word_init_cap <= f.num_words_snippet);
    prop_assert!(f.is_exact_match <= f.is_order_match || f.num_uniq_match == 0.0);
    prop_assert!(f.is_order_match <= f.is_seg_match);
    prop_assert!(f.to_vec().iter().all(|v| v.is_finite() && *v >= 0.0));
    Ok(())
}
