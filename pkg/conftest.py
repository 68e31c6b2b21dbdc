import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'dtop.settings')
django.setup()
