package_version = "0.1 experimental"
bundle_format_id = 1000000
